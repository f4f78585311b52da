"""Interpolation machinery for metric learning.

Covers the convex mix operator, Beta(alpha, alpha) interpolation factors,
mining of hardest negatives, the policies selecting which pairs around an
anchor get mixed, and the three mixing levels (input, split-layer feature,
embedding). The output of a mixing round is a set of labeled mixed
embeddings whose labels interpolate the binary positive/negative labels of
their sources.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from . import encoder
from .datasets import positives_negatives

__all__ = [
    "MIX_TYPES",
    "PAIR_KINDS",
    "BetaSampler",
    "MixPairPolicy",
    "MixedExample",
    "mix",
    "sample_lambda",
    "hard_negatives",
    "select_pairs",
    "f_lambda",
    "build_mixed_set",
    "replay_mixed_embeddings",
    "parse_mix_types",
    "parse_pair_kinds",
]

MIX_TYPES = ("input", "feature", "embed")

# pp: positive-positive, pn: positive-negative, an: anchor-negative,
# nn: negative-negative
PAIR_KINDS = ("pp", "pn", "an", "nn")


def mix(x, x2, lam):
    """Convex combination lam * x + (1 - lam) * x2."""
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x.shape != x2.shape:
        raise ValueError(f"cannot mix shapes {x.shape} and {x2.shape}")
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"interpolation factor {lam} outside [0, 1]")
    return lam * x + (1.0 - lam) * x2


class BetaSampler:
    """Seeded Beta(alpha, alpha) draws via the two-gamma construction."""

    def __init__(self, alpha, seed=0):
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        self.alpha = float(alpha)
        self.rng = seed if isinstance(seed, np.random.Generator) \
            else np.random.default_rng(seed)

    def sample(self):
        while True:
            g1 = self.rng.gamma(self.alpha)
            g2 = self.rng.gamma(self.alpha)
            total = g1 + g2
            if total > 0.0:
                lam = g1 / total
                if 0.0 < lam < 1.0:
                    return lam


def sample_lambda(sampler):
    """One interpolation factor in the open interval (0, 1)."""
    return sampler.sample()


@dataclass(frozen=True)
class MixPairPolicy:
    """Enabled pair kinds; one kind is drawn uniformly per training iteration."""

    kinds: tuple

    def __post_init__(self):
        if not self.kinds:
            raise ValueError("at least one pair kind must be enabled")
        bad = [k for k in self.kinds if k not in PAIR_KINDS]
        if bad:
            raise ValueError(f"unknown pair kinds {bad}; valid: {PAIR_KINDS}")

    def draw(self, rng):
        if len(self.kinds) == 1:
            return self.kinds[0]
        return self.kinds[int(rng.integers(len(self.kinds)))]


@dataclass(frozen=True)
class MixedExample:
    """A mixed embedding with its interpolated label and provenance."""

    v: np.ndarray
    y: float
    lam: float
    sources: tuple


def hard_negatives(anchor, batch, k, params, proxies=None):
    """The k negatives most similar to the anchor, most similar first.

    Ties are broken by batch position. ``anchor`` is a batch member or, for
    proxy-anchored losses, a proxy reference.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if isinstance(anchor, encoder.ProxyRef):
        anchor_vec = proxies.unit_vector(anchor.class_id)
        anchor_class = anchor.class_id
        negatives = [(i, e) for i, e in enumerate(batch) if e.class_id != anchor_class]
    else:
        anchor_vec = encoder.embed(params, anchor.features)
        _, negs = positives_negatives(anchor, batch)
        neg_ids = {id(e) for e in negs}
        negatives = [(i, e) for i, e in enumerate(batch) if id(e) in neg_ids]
    if not negatives:
        raise ValueError("anchor has no negatives in this batch")
    emb = encoder.embed(params, np.stack([e.features for _, e in negatives]))
    sims = emb @ anchor_vec
    order = sorted(range(len(negatives)), key=lambda r: (-sims[r], negatives[r][0]))
    return [negatives[r][1] for r in order[: min(k, len(negatives))]]


def _feasible_kinds(kinds, anchor_mixable, n_pos, n_neg):
    out = []
    for kind in kinds:
        if kind == "pn" and n_pos >= 1 and n_neg >= 1:
            out.append(kind)
        elif kind == "an" and anchor_mixable and n_neg >= 1:
            out.append(kind)
        elif kind == "pp" and n_pos >= 2:
            out.append(kind)
        elif kind == "nn" and n_neg >= 2:
            out.append(kind)
    return out


def select_pairs(anchor, positives, negatives, policy, k_hard, mix_type,
                 params, rng, batch=None, kind=None, proxies=None):
    """Build the mixing-pair set M(a) for one anchor.

    ``kind`` is the pair kind drawn for this iteration; if it is infeasible
    for this anchor, a fresh draw is made among the feasible enabled kinds,
    and an empty set is returned when none is feasible. Each pair carries its
    endpoints with their binary labels; the anchor endpoint is labeled 1.
    For input mixing the negative pool is restricted to the ``k_hard``
    nearest negatives.
    """
    anchor_mixable = not isinstance(anchor, encoder.ProxyRef)
    neg_pool = negatives
    if mix_type == "input" and negatives:
        neg_pool = hard_negatives(anchor, batch if batch is not None else negatives,
                                  k_hard, params, proxies=proxies)
    feasible = _feasible_kinds(policy.kinds, anchor_mixable,
                               len(positives), len(neg_pool))
    if not feasible:
        return [], None
    if kind not in feasible:
        kind = feasible[0] if len(feasible) == 1 \
            else feasible[int(rng.integers(len(feasible)))]
    if kind == "pn":
        pairs = [((p, 1.0), (n, 0.0)) for p in positives for n in neg_pool]
    elif kind == "an":
        pairs = [((anchor, 1.0), (n, 0.0)) for n in neg_pool]
    elif kind == "pp":
        pairs = [((p, 1.0), (q, 1.0))
                 for p, q in itertools.combinations(positives, 2)]
    else:
        pairs = [((n, 0.0), (m, 0.0))
                 for n, m in itertools.combinations(neg_pool, 2)]
    return pairs, kind


def f_lambda(x, x2, lam, mix_type, params):
    """Mix two inputs at the given level and return the resulting embedding."""
    if mix_type == "input":
        return encoder.embed(params, mix(x, x2, lam))
    if mix_type == "feature":
        return encoder.head(params, mix(encoder.features(params, x),
                                        encoder.features(params, x2), lam))
    if mix_type == "embed":
        return mix(encoder.embed(params, x), encoder.embed(params, x2), lam)
    raise ValueError(f"unknown mix type {mix_type!r}; valid: {MIX_TYPES}")


def _endpoint_features(item):
    return item.features if hasattr(item, "features") else np.asarray(item)


def build_mixed_set(anchor, positives, negatives, policy, mix_type, sampler,
                    params, rng, k_hard=3, batch=None, kind=None, proxies=None):
    """Labeled mixed embeddings V(a) for one anchor, one factor per pair."""
    pairs, kind = select_pairs(anchor, positives, negatives, policy, k_hard,
                               mix_type, params, rng, batch=batch, kind=kind,
                               proxies=proxies)
    out = []
    for (a, ya), (b, yb) in pairs:
        lam = sampler.sample()
        v = f_lambda(_endpoint_features(a), _endpoint_features(b),
                     lam, mix_type, params)
        out.append(MixedExample(v=v, y=lam * ya + (1.0 - lam) * yb,
                                lam=lam, sources=(a, b)))
    return out, kind


def replay_mixed_embeddings(params, snapshots):
    """Re-encode recorded (example, example, lam, mix_type) mixing events.

    Used to rebuild the augmented training set under the final model, instead
    of keeping stale vectors from mid-training.
    """
    if not snapshots:
        return np.zeros((0, params.embed_dim))
    rows = np.empty((len(snapshots), params.embed_dim))
    by_type = {}
    for r, (e1, e2, lam, mix_type) in enumerate(snapshots):
        by_type.setdefault(mix_type, []).append((r, e1, e2, lam))
    for mix_type, group in by_type.items():
        x1 = np.stack([e1.features for _, e1, _, _ in group])
        x2 = np.stack([e2.features for _, _, e2, _ in group])
        lam = np.array([g[3] for g in group])[:, None]
        if mix_type == "input":
            v = encoder.embed(params, lam * x1 + (1.0 - lam) * x2)
        elif mix_type == "feature":
            f1 = encoder.features(params, x1)
            f2 = encoder.features(params, x2)
            v = encoder.head(params, lam * f1 + (1.0 - lam) * f2)
        elif mix_type == "embed":
            v = lam * encoder.embed(params, x1) + \
                (1.0 - lam) * encoder.embed(params, x2)
        else:
            raise ValueError(f"unknown mix type {mix_type!r}")
        for (r, _, _, _), row in zip(group, np.atleast_2d(v)):
            rows[r] = row
    return rows


def parse_mix_types(text):
    """Parse a mix-type config value like ``feature`` or ``input+embed``."""
    types = tuple(t.strip() for t in str(text).split("+") if t.strip())
    if not types:
        raise ValueError("empty mix type")
    bad = [t for t in types if t not in MIX_TYPES]
    if bad:
        raise ValueError(f"unknown mix types {bad}; valid: {MIX_TYPES}")
    return types


def parse_pair_kinds(text):
    """Parse a pairs config value like ``pn+an``."""
    kinds = tuple(k.strip() for k in str(text).split("+") if k.strip())
    if not kinds:
        raise ValueError("empty pair kinds")
    bad = [k for k in kinds if k not in PAIR_KINDS]
    if bad:
        raise ValueError(f"unknown pair kinds {bad}; valid: {PAIR_KINDS}")
    return kinds
