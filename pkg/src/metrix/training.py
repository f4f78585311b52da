"""Mini-batch optimization of the encoder and proxies.

The per-step objective is the anchor-mean of the clean loss plus w times the
mixed loss. Each step builds the loss graph on a scalar tape whose leaves are
the similarity values; the tape backward yields d(objective)/d(similarity),
which is then chained through the (vectorized) encoder backward passes to
parameter gradients. Mixing randomness for a step is planned up front so the
objective is a deterministic function of the parameters given the plan, which
is what makes whole-step finite-difference checks possible.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import evaluation
from . import losses
from . import mixing
from .datasets import SamplerConfig, sample_batch

__all__ = [
    "NumericError",
    "ModelConfig",
    "TrainConfig",
    "RunState",
    "Trainer",
    "train",
    "METRICS_COLUMNS",
]

METRICS_COLUMNS = ("epoch", "train_loss", "recall@1", "recall@2", "recall@4",
                   "alignment", "uniformity", "utilization")

# similarity-leaf roles for chaining tape gradients into embedding space
_EE, _PE, _EP, _ME, _PM = range(5)


class NumericError(RuntimeError):
    """Training produced a non-finite objective value."""


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: tuple = (32,)
    embed_dim: int = 16
    split: int = 1
    init_scale: float = 1.0
    embed_bias: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    sampler: SamplerConfig
    model: ModelConfig = field(default_factory=ModelConfig)
    loss_name: str = "contrastive"
    loss_hyperparams: dict = field(default_factory=dict)
    mix_types: tuple = ("feature",)
    pair_kinds: tuple = ("pn", "an")
    alpha: float = 2.0
    k_hard: int = 3
    w: float = 0.4
    optimizer: str = "sgd-momentum"
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_decay_epoch: int = 50
    lr_decay_factor: float = 0.5
    seed: int = 0
    eval_every: int = 10
    snapshots_per_epoch: int = 200

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.w < 0:
            raise ValueError(f"mixing strength must be >= 0, got {self.w}")
        if self.optimizer not in ("sgd", "sgd-momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.k_hard < 1:
            raise ValueError(f"k_hard must be >= 1, got {self.k_hard}")


@dataclass
class RunState:
    epoch: int
    params: enc.EncoderParams
    proxies: object
    log: list
    snapshots: list
    final: dict


def _fmt(value):
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


class Trainer:
    def __init__(self, dataset, config, params=None, proxies=None):
        self.dataset = dataset
        self.config = config
        self.plugin = losses.make_plugin(config.loss_name,
                                         **config.loss_hyperparams)
        mc = config.model
        self.params = params if params is not None else enc.init_encoder(
            dataset.input_dim, hidden_dims=tuple(mc.hidden_dims),
            embed_dim=mc.embed_dim, split=mc.split, seed=mc.seed,
            init_scale=mc.init_scale, embed_bias=mc.embed_bias)
        if self.plugin.anchor_is_proxy or self.plugin.elements_are_proxies:
            self.proxies = proxies if proxies is not None else enc.init_proxies(
                dataset.train_classes, self.params.embed_dim, seed=mc.seed + 1)
        else:
            self.proxies = proxies
        self.policy = mixing.MixPairPolicy(tuple(config.pair_kinds))
        self.mix_types = tuple(config.mix_types)
        self.mix_rng = np.random.default_rng((int(config.seed), 1))
        self.beta_sampler = mixing.BetaSampler(
            config.alpha, np.random.default_rng((int(config.seed), 2)))
        self.lr = config.lr
        self.velocity = enc.zero_grads(self.params)
        self.proxy_velocity = (np.zeros_like(self.proxies.vectors)
                               if self.proxies is not None else None)
        self.snapshots = []
        self._epoch_snapshots = 0

    # -- anchor bookkeeping ------------------------------------------------

    def _anchor_specs(self, batch):
        """Per-anchor positive/negative index sets for the active loss family."""
        labels = [e.class_id for e in batch]
        specs = []
        if self.plugin.anchor_is_proxy:
            for row, c in enumerate(self.proxies.class_ids):
                specs.append({
                    "proxy_row": row,
                    "anchor_item": enc.ProxyRef(c),
                    "pos": [i for i, l in enumerate(labels) if l == c],
                    "neg": [i for i, l in enumerate(labels) if l != c],
                })
        else:
            for i, e in enumerate(batch):
                specs.append({
                    "example": i,
                    "anchor_item": e,
                    "pos": [j for j, l in enumerate(labels)
                            if j != i and l == e.class_id],
                    "neg": [j for j, l in enumerate(labels) if l != e.class_id],
                })
        return specs

    def plan_mixing(self, batch, specs):
        """Freeze this step's mixing randomness: mix level, pair kind, pairs, factors."""
        if self.config.w == 0.0:
            return None
        mix_type = self.mix_types[0] if len(self.mix_types) == 1 else \
            self.mix_types[int(self.mix_rng.integers(len(self.mix_types)))]
        step_kind = self.policy.draw(self.mix_rng)
        index_of = {id(e): i for i, e in enumerate(batch)}
        anchors = []
        for spec in specs:
            positives = [batch[j] for j in spec["pos"]]
            negatives = [batch[j] for j in spec["neg"]]
            pairs, kind = mixing.select_pairs(
                spec["anchor_item"], positives, negatives, self.policy,
                self.config.k_hard, mix_type, self.params, self.mix_rng,
                batch=batch, kind=step_kind, proxies=self.proxies)
            if not pairs:
                anchors.append(None)
                continue
            meta = []
            lams = []
            for (a, ya), (b, yb) in pairs:
                meta.append((index_of[id(a)], ya, index_of[id(b)], yb))
                lams.append(self.beta_sampler.sample())
            anchors.append((kind, meta, lams))
        return {"mix_type": mix_type, "anchors": anchors}

    # -- objective and gradients --------------------------------------------

    def batch_objective(self, batch, plan, params=None, proxies=None,
                        want_grads=True):
        """Objective value (and, unless disabled, parameter gradients) for one batch.

        The mixing plan fixes all sampled choices, so for a given plan this is
        a deterministic function of (params, proxies).
        """
        params = self.params if params is None else params
        proxies = self.proxies if proxies is None else proxies
        cfg = self.config
        plugin = self.plugin

        X = np.stack([e.features for e in batch])
        F, f_cache = enc.features_forward(params, X)
        E, h_cache = enc.forward(params, F, start_layer=params.split)
        unit_prox = prox_norms = None
        if proxies is not None:
            prox_norms = np.linalg.norm(proxies.vectors, axis=1)
            unit_prox = proxies.vectors / prox_norms[:, None]

        specs = self._anchor_specs(batch)

        # assemble mixed rows for the whole step, then one batched head pass
        mix_type = plan["mix_type"] if plan else None
        row_meta = []
        anchor_rows = [None] * len(specs)
        if plan is not None:
            for a, entry in enumerate(plan["anchors"]):
                if entry is None:
                    continue
                _, meta, lams = entry
                start = len(row_meta)
                row_meta.extend((i1, y1, i2, y2, lam)
                                for (i1, y1, i2, y2), lam in zip(meta, lams))
                anchor_rows[a] = (start, len(row_meta))
        Vm = None
        mh_cache = fmix_cache = None
        if row_meta:
            i1 = np.array([r[0] for r in row_meta])
            i2 = np.array([r[2] for r in row_meta])
            lam = np.array([r[4] for r in row_meta])[:, None]
            if mix_type == "embed":
                Vm = lam * E[i1] + (1.0 - lam) * E[i2]
            elif mix_type == "feature":
                rows = lam * F[i1] + (1.0 - lam) * F[i2]
                Vm, mh_cache = enc.forward(params, rows, start_layer=params.split)
            elif mix_type == "input":
                rows = lam * X[i1] + (1.0 - lam) * X[i2]
                fmix, fmix_cache = enc.features_forward(params, rows)
                Vm, mh_cache = enc.forward(params, fmix, start_layer=params.split)
            else:
                raise ValueError(f"unknown mix type {mix_type!r}")
            Vm = np.atleast_2d(Vm)

        tape = ad.Tape()
        leaves = []  # (leaf index, role, a, b)

        def sim_leaf(value, role, a, b):
            value = float(value)
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite similarity {value!r} during {plugin.name} "
                    "training; parameters have diverged")
            v = tape.var(value)
            leaves.append((v.index, role, a, b))
            return v

        clean_losses, mixed_losses = [], []
        for a, spec in enumerate(specs):
            if plugin.anchor_is_proxy:
                row = spec["proxy_row"]
                anchor_vec = unit_prox[row]
                items = [(sim_leaf(anchor_vec @ E[j], _PE, row, j), y)
                         for j, y in [(j, 1.0) for j in spec["pos"]]
                         + [(j, 0.0) for j in spec["neg"]]]
            elif plugin.elements_are_proxies:
                i = spec["example"]
                anchor_vec = E[i]
                own = proxies.index_of(batch[i].class_id)
                items = [(sim_leaf(E[i] @ unit_prox[own], _EP, i, own), 1.0)]
                items += [(sim_leaf(E[i] @ unit_prox[r], _EP, i, r), 0.0)
                          for r in range(len(proxies.class_ids)) if r != own]
            else:
                i = spec["example"]
                anchor_vec = E[i]
                items = [(sim_leaf(E[i] @ E[j], _EE, i, j), 1.0)
                         for j in spec["pos"]]
                items += [(sim_leaf(E[i] @ E[j], _EE, i, j), 0.0)
                          for j in spec["neg"]]
            has_pos = any(y > 0.0 for _, y in items)
            has_neg = any(y < 1.0 for _, y in items)
            if (plugin.needs_positives and not has_pos) or \
                    (plugin.needs_negatives and not has_neg):
                continue
            clean_losses.append(losses.labeled_loss(items, plugin, tape))

            mix_slice = anchor_rows[a]
            if mix_slice is None:
                mixed_losses.append(None)
                continue
            start, end = mix_slice
            role = _PM if plugin.anchor_is_proxy else _ME
            aref = spec["proxy_row"] if plugin.anchor_is_proxy else spec["example"]
            mitems = []
            for r in range(start, end):
                i1, y1, i2, y2, lam_r = row_meta[r]
                y = lam_r * y1 + (1.0 - lam_r) * y2
                mitems.append((sim_leaf(anchor_vec @ Vm[r], role, aref, r), y))
            m_has_pos = any(y > 0.0 for _, y in mitems)
            m_has_neg = any(y < 1.0 for _, y in mitems)
            if (plugin.needs_positives and not m_has_pos) or \
                    (plugin.needs_negatives and not m_has_neg):
                mixed_losses.append(None)
            else:
                mixed_losses.append(losses.labeled_loss(mitems, plugin, tape))

        if not clean_losses:
            raise ValueError("batch produced no evaluable anchors for "
                             f"{plugin.name}")
        total = losses.total_error(clean_losses, mixed_losses, cfg.w, tape)
        value = total.value
        if not math.isfinite(value):
            raise NumericError(f"non-finite objective {value!r} "
                               f"(loss {plugin.name}, w={cfg.w})")
        if not want_grads:
            return value, None, None

        tape_grad = np.asarray(ad.backward(total))
        dE = np.zeros_like(E)
        dUP = np.zeros_like(unit_prox) if unit_prox is not None else None
        dV = np.zeros_like(Vm) if Vm is not None else None
        by_role = {}
        for leaf, role, a, b in leaves:
            by_role.setdefault(role, []).append((leaf, a, b))
        for role, recs in by_role.items():
            g = tape_grad[[r[0] for r in recs]][:, None]
            ai = np.array([r[1] for r in recs])
            bi = np.array([r[2] for r in recs])
            if role == _EE:
                np.add.at(dE, ai, g * E[bi])
                np.add.at(dE, bi, g * E[ai])
            elif role == _PE:
                np.add.at(dUP, ai, g * E[bi])
                np.add.at(dE, bi, g * unit_prox[ai])
            elif role == _EP:
                np.add.at(dE, ai, g * unit_prox[bi])
                np.add.at(dUP, bi, g * E[ai])
            elif role == _ME:
                np.add.at(dE, ai, g * Vm[bi])
                np.add.at(dV, bi, g * E[ai])
            else:
                np.add.at(dUP, ai, g * Vm[bi])
                np.add.at(dV, bi, g * unit_prox[ai])

        grads = enc.zero_grads(params)

        def accumulate(part):
            for k, (dw, db) in part.items():
                gw, gb = grads[k]
                gw += dw
                gb += db

        dF_extra = np.zeros_like(F)
        if row_meta:
            i1 = np.array([r[0] for r in row_meta])
            i2 = np.array([r[2] for r in row_meta])
            lam = np.array([r[4] for r in row_meta])[:, None]
            if mix_type == "embed":
                np.add.at(dE, i1, lam * dV)
                np.add.at(dE, i2, (1.0 - lam) * dV)
            elif mix_type == "feature":
                part, dFm = enc.backward(params, mh_cache, dV)
                accumulate(part)
                np.add.at(dF_extra, i1, lam * dFm)
                np.add.at(dF_extra, i2, (1.0 - lam) * dFm)
            else:
                part, dFm = enc.backward(params, mh_cache, dV)
                accumulate(part)
                part, _ = enc.features_backward(params, fmix_cache, dFm)
                accumulate(part)

        part, dF_clean = enc.backward(params, h_cache, dE)
        accumulate(part)
        part, _ = enc.features_backward(params, f_cache, dF_clean + dF_extra)
        accumulate(part)

        proxy_grads = None
        if dUP is not None:
            inner = np.sum(unit_prox * dUP, axis=1, keepdims=True)
            proxy_grads = (dUP - unit_prox * inner) / prox_norms[:, None]
        return value, grads, proxy_grads

    # -- optimization --------------------------------------------------------

    def apply_update(self, grads, proxy_grads, lr):
        cfg = self.config
        use_momentum = cfg.optimizer == "sgd-momentum"
        for k in range(len(self.params.weights)):
            dw, db = grads[k]
            if cfg.weight_decay:
                dw = dw + cfg.weight_decay * self.params.weights[k]
            if use_momentum:
                vw, vb = self.velocity[k]
                vw *= cfg.momentum
                vw += dw
                vb *= cfg.momentum
                vb += db
                self.params.weights[k] -= lr * vw
                self.params.biases[k] -= lr * vb
            else:
                self.params.weights[k] -= lr * dw
                self.params.biases[k] -= lr * db
        if proxy_grads is not None and self.proxies is not None:
            if use_momentum:
                self.proxy_velocity *= cfg.momentum
                self.proxy_velocity += proxy_grads
                self.proxies.vectors -= lr * self.proxy_velocity
            else:
                self.proxies.vectors -= lr * proxy_grads
            self.proxies.renormalize()

    def _record_snapshots(self, batch, plan):
        if plan is None:
            return
        quota = self.config.snapshots_per_epoch - self._epoch_snapshots
        if quota <= 0:
            return
        mix_type = plan["mix_type"]
        for entry in plan["anchors"]:
            if entry is None:
                continue
            _, meta, lams = entry
            for (i1, _, i2, _), lam in zip(meta, lams):
                self.snapshots.append((batch[i1], batch[i2], lam, mix_type))
                self._epoch_snapshots += 1
                quota -= 1
                if quota <= 0:
                    return

    def train_step(self, batch, lr=None):
        """One gradient step; returns the objective value before the update."""
        specs = self._anchor_specs(batch)
        plan = self.plan_mixing(batch, specs)
        self._record_snapshots(batch, plan)
        value, grads, proxy_grads = self.batch_objective(batch, plan)
        self.apply_update(grads, proxy_grads, self.lr if lr is None else lr)
        return value

    def _evaluate(self, epoch, train_loss):
        test = self.dataset.test_split()
        train = self.dataset.train_split()
        report = evaluation.evaluate_model(self.params, test, train)
        return {
            "epoch": epoch,
            "train_loss": train_loss,
            "recall@1": report.recall[1],
            "recall@2": report.recall[2],
            "recall@4": report.recall[4],
            "alignment": report.alignment,
            "uniformity": report.uniformity,
            "utilization": report.utilization,
        }

    def run(self, out_dir=None):
        """Full training loop with periodic evaluation on the held-out classes."""
        cfg = self.config
        n_train = len(self.dataset.train_split())
        if cfg.sampler.batch_size > n_train:
            raise ValueError(f"batch_size {cfg.sampler.batch_size} exceeds "
                             f"train split of {n_train}")
        steps_per_epoch = max(1, n_train // cfg.sampler.batch_size)
        log = []
        for epoch in range(1, cfg.epochs + 1):
            if epoch == cfg.lr_decay_epoch + 1:
                self.lr *= cfg.lr_decay_factor
                if out_dir is not None:
                    enc.save_checkpoint(
                        self.params, self.proxies,
                        os.path.join(out_dir, f"checkpoint_epoch{epoch - 1}.txt"))
            self._epoch_snapshots = 0
            epoch_losses = []
            for s in range(steps_per_epoch):
                step = (epoch - 1) * steps_per_epoch + s
                batch = sample_batch(self.dataset, cfg.sampler, step)
                epoch_losses.append(self.train_step(batch))
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                log.append(self._evaluate(epoch, float(np.mean(epoch_losses))))

        final = dict(log[-1])
        final["utilization_clean"] = final["utilization"]
        if self.snapshots:
            mixed = mixing.replay_mixed_embeddings(self.params, self.snapshots)
            final["utilization_augmented"] = evaluation.utilization(
                self.params, self.dataset.test_split(),
                self.dataset.train_split(), mixed_vectors=mixed)
        if out_dir is not None:
            self._write_metrics(log, os.path.join(out_dir, "metrics.csv"))
            enc.save_checkpoint(self.params, self.proxies,
                                os.path.join(out_dir, "checkpoint_final.txt"))
        return RunState(epoch=cfg.epochs, params=self.params,
                        proxies=self.proxies, log=log,
                        snapshots=self.snapshots, final=final)

    @staticmethod
    def _write_metrics(log, path):
        lines = [",".join(METRICS_COLUMNS)]
        for row in log:
            lines.append(",".join(_fmt(row[c]) for c in METRICS_COLUMNS))
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def train(dataset, config, out_dir=None, params=None, proxies=None):
    """Train a fresh (or given) model under ``config``; see :class:`Trainer`."""
    return Trainer(dataset, config, params=params, proxies=proxies).run(out_dir)
