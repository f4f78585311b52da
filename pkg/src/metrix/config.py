"""Experiment configuration files.

Flat INI-style sections ([dataset], [model], [loss], [mixup], [trainer]) with
key=value entries. Every key has a default; unknown sections or keys are
rejected so typos fail loudly, and parse errors name the offending
section.key. The fully resolved values (defaults included) are echoed into
run.json so a run documents itself.
"""

import configparser
import os
from dataclasses import dataclass

from .datasets import SamplerConfig, generate_gaussian, load_dataset
from .losses import PLUGIN_NAMES
from .mixing import parse_mix_types, parse_pair_kinds
from .training import ModelConfig, TrainConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "DEFAULTS"]


class ConfigError(Exception):
    """A configuration problem, reported with its section.key path."""


DEFAULTS = {
    "dataset": {
        "path": "",
        "split_path": "",
        "classes": "32",
        "per_class": "20",
        "dim": "8",
        "center_scale": "2.0",
        "noise_sigma": "0.8",
        "seed": "42",
    },
    "model": {
        "hidden": "32",
        "embed_dim": "16",
        "split": "1",
        "init_scale": "1.0",
        "embed_bias": "0.0",
        "seed": "",
    },
    "loss": {
        "name": "contrastive",
        "margin": "",
        "beta": "",
        "gamma": "",
        "temperature": "",
    },
    "mixup": {
        "mix_type": "feature",
        "pairs": "pn+an",
        "alpha": "2.0",
        "k_hard": "3",
        "w": "0.4",
    },
    "trainer": {
        "epochs": "60",
        "batch_size": "20",
        "sampler": "balanced",
        "classes_per_batch": "10",
        "samples_per_class": "2",
        "optimizer": "sgd-momentum",
        "lr": "0.05",
        "momentum": "0.9",
        "weight_decay": "0.0",
        "lr_decay_epoch": "50",
        "lr_decay_factor": "0.5",
        "eval_every": "10",
        "seed": "1",
        "sampler_seed": "",
        "snapshots_per_epoch": "200",
    },
}


def _parse(raw, section, key, kind):
    text = raw[section][key]
    try:
        return kind(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


@dataclass
class ExperimentConfig:
    """Resolved experiment description plus its echo for run.json."""

    dataset: dict
    train: TrainConfig
    resolved: dict

    def build_dataset(self, base_dir="."):
        """Load the configured dataset file, or generate the synthetic one."""
        ds = self.dataset
        if ds["path"]:
            path = os.path.join(base_dir, ds["path"])
            split = os.path.join(base_dir, ds["split_path"] or ds["path"] + ".split")
            try:
                return load_dataset(path, split)
            except OSError as exc:
                raise ConfigError(f"dataset.path: {exc}") from None
        try:
            return generate_gaussian(ds["classes"], ds["per_class"], ds["dim"],
                                     ds["center_scale"], ds["noise_sigma"],
                                     ds["seed"])
        except ValueError as exc:
            raise ConfigError(f"dataset: {exc}") from None


def load_config(path, seed_override=None):
    """Parse and validate a config file; ``seed_override`` replaces trainer.seed."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path!r}: {exc}") from None

    raw = {section: dict(values) for section, values in DEFAULTS.items()}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]; valid: "
                              + ", ".join(sorted(DEFAULTS)))
        for key, value in parser[section].items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{section}.{key}: unknown key; valid: "
                                  + ", ".join(sorted(DEFAULTS[section])))
            raw[section][key] = value

    dataset = {
        "path": raw["dataset"]["path"],
        "split_path": raw["dataset"]["split_path"],
        "classes": _parse(raw, "dataset", "classes", int),
        "per_class": _parse(raw, "dataset", "per_class", int),
        "dim": _parse(raw, "dataset", "dim", int),
        "center_scale": _parse(raw, "dataset", "center_scale", float),
        "noise_sigma": _parse(raw, "dataset", "noise_sigma", float),
        "seed": _parse(raw, "dataset", "seed", int),
    }

    trainer_seed = _parse(raw, "trainer", "seed", int)
    if seed_override is not None:
        try:
            trainer_seed = int(seed_override)
        except ValueError:
            raise ConfigError(
                f"METRIX_SEED must be an integer, got {seed_override!r}"
            ) from None

    model_seed = raw["model"]["seed"].strip()
    model_seed = int(model_seed) if model_seed else trainer_seed + 1000
    sampler_seed = raw["trainer"]["sampler_seed"].strip()
    sampler_seed = int(sampler_seed) if sampler_seed else trainer_seed + 2000

    try:
        hidden = tuple(int(tok) for tok in raw["model"]["hidden"].split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"model.hidden: {exc}") from None
    try:
        model = ModelConfig(
            hidden_dims=hidden,
            embed_dim=_parse(raw, "model", "embed_dim", int),
            split=_parse(raw, "model", "split", int),
            init_scale=_parse(raw, "model", "init_scale", float),
            embed_bias=_parse(raw, "model", "embed_bias", float),
            seed=model_seed,
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None

    loss_name = raw["loss"]["name"].strip()
    if loss_name not in PLUGIN_NAMES:
        raise ConfigError(f"loss.name: unknown loss {loss_name!r}; valid names: "
                          + ", ".join(PLUGIN_NAMES))
    loss_hyper = {}
    for key in ("margin", "beta", "gamma", "temperature"):
        if raw["loss"][key].strip():
            loss_hyper[key] = _parse(raw, "loss", key, float)

    try:
        mix_types = parse_mix_types(raw["mixup"]["mix_type"])
    except ValueError as exc:
        raise ConfigError(f"mixup.mix_type: {exc}") from None
    try:
        pair_kinds = parse_pair_kinds(raw["mixup"]["pairs"])
    except ValueError as exc:
        raise ConfigError(f"mixup.pairs: {exc}") from None

    mode = raw["trainer"]["sampler"].strip()
    try:
        sampler = SamplerConfig(
            mode=mode,
            batch_size=_parse(raw, "trainer", "batch_size", int),
            classes_per_batch=_parse(raw, "trainer", "classes_per_batch", int)
            if mode == "balanced" else 0,
            samples_per_class=_parse(raw, "trainer", "samples_per_class", int)
            if mode == "balanced" else 0,
            seed=sampler_seed,
        )
    except ValueError as exc:
        raise ConfigError(f"trainer.sampler: {exc}") from None

    try:
        train = TrainConfig(
            epochs=_parse(raw, "trainer", "epochs", int),
            sampler=sampler,
            model=model,
            loss_name=loss_name,
            loss_hyperparams=loss_hyper,
            mix_types=mix_types,
            pair_kinds=pair_kinds,
            alpha=_parse(raw, "mixup", "alpha", float),
            k_hard=_parse(raw, "mixup", "k_hard", int),
            w=_parse(raw, "mixup", "w", float),
            optimizer=raw["trainer"]["optimizer"].strip(),
            lr=_parse(raw, "trainer", "lr", float),
            momentum=_parse(raw, "trainer", "momentum", float),
            weight_decay=_parse(raw, "trainer", "weight_decay", float),
            lr_decay_epoch=_parse(raw, "trainer", "lr_decay_epoch", int),
            lr_decay_factor=_parse(raw, "trainer", "lr_decay_factor", float),
            seed=trainer_seed,
            eval_every=_parse(raw, "trainer", "eval_every", int),
            snapshots_per_epoch=_parse(raw, "trainer", "snapshots_per_epoch", int),
        )
    except ValueError as exc:
        raise ConfigError(f"trainer: {exc}") from None

    resolved = {
        "dataset": dict(dataset),
        "model": {
            "hidden": list(hidden),
            "embed_dim": model.embed_dim,
            "split": model.split,
            "init_scale": model.init_scale,
            "embed_bias": model.embed_bias,
            "seed": model.seed,
        },
        "loss": {"name": loss_name, **loss_hyper},
        "mixup": {
            "mix_type": "+".join(mix_types),
            "pairs": "+".join(pair_kinds),
            "alpha": train.alpha,
            "k_hard": train.k_hard,
            "w": train.w,
        },
        "trainer": {
            "epochs": train.epochs,
            "batch_size": sampler.batch_size,
            "sampler": sampler.mode,
            "classes_per_batch": sampler.classes_per_batch,
            "samples_per_class": sampler.samples_per_class,
            "optimizer": train.optimizer,
            "lr": train.lr,
            "momentum": train.momentum,
            "weight_decay": train.weight_decay,
            "lr_decay_epoch": train.lr_decay_epoch,
            "lr_decay_factor": train.lr_decay_factor,
            "eval_every": train.eval_every,
            "seed": train.seed,
            "sampler_seed": sampler_seed,
            "snapshots_per_epoch": train.snapshots_per_epoch,
        },
    }
    return ExperimentConfig(dataset=dataset, train=train, resolved=resolved)
