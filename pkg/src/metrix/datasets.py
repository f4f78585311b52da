"""Synthetic labeled datasets with disjoint train/test classes, plus batch sampling.

Gaussian class blobs stand in for the usual retrieval benchmarks: half the
classes (even ids) are used for training, the other half (odd ids) only for
evaluation, so the encoder is always scored on classes it never saw.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Example",
    "Dataset",
    "SamplerConfig",
    "generate_gaussian",
    "sample_batch",
    "positives_negatives",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True, eq=False)
class Example:
    """One labeled point: an input-space feature vector and its class id."""

    features: np.ndarray
    class_id: int


@dataclass(frozen=True)
class Dataset:
    examples: tuple
    class_count: int
    train_classes: frozenset
    test_classes: frozenset

    def train_split(self):
        return [e for e in self.examples if e.class_id in self.train_classes]

    def test_split(self):
        return [e for e in self.examples if e.class_id in self.test_classes]

    @property
    def input_dim(self):
        return int(self.examples[0].features.shape[0])


@dataclass(frozen=True)
class SamplerConfig:
    """Batch sampling policy: uniform-random or class-balanced."""

    mode: str
    batch_size: int
    classes_per_batch: int = 0
    samples_per_class: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("random", "balanced"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode == "balanced":
            if self.classes_per_batch * self.samples_per_class != self.batch_size:
                raise ValueError(
                    "balanced sampling requires classes_per_batch * "
                    f"samples_per_class == batch_size, got {self.classes_per_batch} "
                    f"* {self.samples_per_class} != {self.batch_size}"
                )


def _frozen(arr):
    arr = np.asarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def generate_gaussian(num_classes, per_class, input_dim, center_scale,
                      noise_sigma, seed):
    """Sample ``num_classes`` Gaussian blobs of ``per_class`` points each.

    Class centers are uniform in [-center_scale, center_scale]^input_dim and
    points are isotropic normal around them. Even class ids form the train
    split, odd ids the test split, so the two halves are disjoint by
    construction.
    """
    if num_classes < 2 or num_classes % 2 != 0:
        raise ValueError(f"num_classes must be even and >= 2, got {num_classes}")
    if per_class < 2:
        raise ValueError(f"per_class must be >= 2, got {per_class}")
    if input_dim < 1:
        raise ValueError(f"input_dim must be >= 1, got {input_dim}")
    if noise_sigma <= 0:
        raise ValueError(f"noise_sigma must be positive, got {noise_sigma}")

    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_scale, center_scale, size=(num_classes, input_dim))
    examples = []
    for c in range(num_classes):
        points = centers[c] + noise_sigma * rng.standard_normal((per_class, input_dim))
        for row in points:
            examples.append(Example(features=_frozen(row), class_id=c))
    return Dataset(
        examples=tuple(examples),
        class_count=num_classes,
        train_classes=frozenset(range(0, num_classes, 2)),
        test_classes=frozenset(range(1, num_classes, 2)),
    )


def sample_batch(dataset, config, step):
    """Draw one training batch; a pure function of (dataset, config, step)."""
    rng = np.random.default_rng((int(config.seed), int(step)))
    train = dataset.train_split()
    if config.mode == "random":
        if config.batch_size > len(train):
            raise ValueError(
                f"batch_size {config.batch_size} exceeds train split of {len(train)}"
            )
        idx = rng.choice(len(train), size=config.batch_size, replace=False)
        return [train[i] for i in idx]

    by_class = {}
    for e in train:
        by_class.setdefault(e.class_id, []).append(e)
    classes = sorted(by_class)
    if config.classes_per_batch > len(classes):
        raise ValueError(
            f"classes_per_batch {config.classes_per_batch} exceeds "
            f"{len(classes)} train classes"
        )
    short = [c for c in classes if len(by_class[c]) < config.samples_per_class]
    if short:
        raise ValueError(
            f"classes {short} have fewer than {config.samples_per_class} examples"
        )
    chosen = rng.choice(len(classes), size=config.classes_per_batch, replace=False)
    batch = []
    for ci in chosen:
        members = by_class[classes[ci]]
        take = rng.choice(len(members), size=config.samples_per_class, replace=False)
        batch.extend(members[i] for i in take)
    return batch


def positives_negatives(anchor, batch):
    """Partition ``batch`` around ``anchor`` into same-class and other-class sets."""
    anchor_at = None
    for i, e in enumerate(batch):
        if e is anchor:
            anchor_at = i
            break
    if anchor_at is None:
        raise ValueError("anchor is not a member of the batch")
    positives = [e for i, e in enumerate(batch)
                 if i != anchor_at and e.class_id == anchor.class_id]
    negatives = [e for e in batch if e.class_id != anchor.class_id]
    return positives, negatives


def save_dataset(dataset, path, split_path):
    """Write a dataset and its train-class list as round-trip-exact text."""
    lines = [f"{dataset.input_dim} {dataset.class_count}"]
    for e in dataset.examples:
        values = " ".join(repr(float(v)) for v in e.features)
        lines.append(f"{e.class_id} {values}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(split_path, "w", newline="\n") as fh:
        fh.write(" ".join(str(c) for c in sorted(dataset.train_classes)) + "\n")


def load_dataset(path, split_path):
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    dim, class_count = (int(tok) for tok in lines[0].split())
    examples = []
    for ln in lines[1:]:
        toks = ln.split()
        if len(toks) != dim + 1:
            raise ValueError(f"expected {dim + 1} fields per line, got {len(toks)}")
        examples.append(Example(
            features=_frozen([float(t) for t in toks[1:]]),
            class_id=int(toks[0]),
        ))
    with open(split_path) as fh:
        train_classes = frozenset(int(t) for t in fh.read().split())
    seen = {e.class_id for e in examples}
    if not seen <= set(range(class_count)):
        raise ValueError("class ids exceed declared class count")
    counts = {}
    for e in examples:
        counts[e.class_id] = counts.get(e.class_id, 0) + 1
    thin = [c for c, n in counts.items() if n < 2]
    if thin:
        raise ValueError(f"classes {sorted(thin)} have fewer than 2 examples")
    return Dataset(
        examples=tuple(examples),
        class_count=class_count,
        train_classes=train_classes,
        test_classes=frozenset(range(class_count)) - train_classes,
    )
