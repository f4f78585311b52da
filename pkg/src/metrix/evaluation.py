"""Embedding-space diagnostics.

Positivity curves quantify how often a positive-negative mixed embedding
pulls toward the anchor (loss derivative w.r.t. its similarity <= 0) as a
function of the interpolation factor, both by direct differentiation and via
the closed-form similarity threshold evaluated against the empirical
similarity CDF. Alignment, uniformity, utilization and Recall@K score the
learned embedding on held-out classes.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import encoder
from .losses import labeled_loss

__all__ = [
    "UNIFORMITY_T",
    "PositivityCurve",
    "MetricsReport",
    "ms_positivity_threshold",
    "positivity_empirical",
    "positivity_theoretical",
    "positivity_curve",
    "alignment",
    "uniformity",
    "utilization",
    "recall_at_k",
    "evaluate_model",
]

# Gaussian-kernel temperature for uniformity; alignment uses squared distance.
UNIFORMITY_T = 2.0


@dataclass(frozen=True)
class PositivityCurve:
    lambdas: tuple
    empirical: tuple
    theoretical: tuple
    n: int


@dataclass(frozen=True)
class MetricsReport:
    alignment: float
    uniformity: float
    utilization: float
    recall: dict


def ms_positivity_threshold(lam, beta, gamma, margin):
    """Similarity below which a pos-neg mixed embedding acts as a positive.

    Closed form for the multi-similarity loss with a single mixed element:
    ln(lam / (1 - lam)) / (beta + gamma) + margin. By convention the
    threshold is -inf at lam = 0 and +inf at lam = 1.
    """
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda {lam} outside [0, 1]")
    if lam == 0.0:
        return -math.inf
    if lam == 1.0:
        return math.inf
    return math.log(lam / (1.0 - lam)) / (beta + gamma) + margin


def _triple_indices(examples, n, rng):
    """Common (anchor, positive, negative) index triples for all grid points."""
    labels = np.array([e.class_id for e in examples])
    by_class = {}
    for i, c in enumerate(labels):
        by_class.setdefault(int(c), []).append(i)
    eligible = [i for i in range(len(examples)) if len(by_class[int(labels[i])]) >= 2]
    if not eligible or len(by_class) < 2:
        raise ValueError("need at least two classes with two examples each")
    triples = np.empty((n, 3), dtype=np.int64)
    for row in range(n):
        a = eligible[int(rng.integers(len(eligible)))]
        same = [j for j in by_class[int(labels[a])] if j != a]
        p = same[int(rng.integers(len(same)))]
        while True:
            q = int(rng.integers(len(examples)))
            if labels[q] != labels[a]:
                break
        triples[row] = (a, p, q)
    return triples


def _mixed_similarities(params, examples, triples, lam, mix_type):
    """s(a, v) for every triple at one interpolation factor, batched."""
    a_idx, p_idx, n_idx = triples[:, 0], triples[:, 1], triples[:, 2]
    X = np.stack([e.features for e in examples])
    anchors = encoder.embed(params, X[a_idx])
    if mix_type == "embed":
        v = lam * encoder.embed(params, X[p_idx]) + \
            (1.0 - lam) * encoder.embed(params, X[n_idx])
    elif mix_type == "feature":
        fp = encoder.features(params, X[p_idx])
        fn = encoder.features(params, X[n_idx])
        v = encoder.head(params, lam * fp + (1.0 - lam) * fn)
    elif mix_type == "input":
        v = encoder.embed(params, lam * X[p_idx] + (1.0 - lam) * X[n_idx])
    else:
        raise ValueError(f"unknown mix type {mix_type!r}")
    return np.sum(anchors * np.atleast_2d(v), axis=1)


def positivity_empirical(params, dataset, plugin, lambdas, n, seed,
                         mix_type="embed"):
    """Per-lambda fraction of mixed embeddings with d(loss)/d(similarity) <= 0.

    Samples n (anchor, positive, negative) triples from the train split once
    and reuses them at every grid point, so the curve is free of cross-point
    sampling jitter.
    """
    if n < 1:
        raise ValueError("need at least one sample per grid point")
    rng = np.random.default_rng(seed)
    train = dataset.train_split()
    triples = _triple_indices(train, n, rng)
    fractions = []
    for lam in lambdas:
        lam = float(lam)
        sims = _mixed_similarities(params, train, triples, lam, mix_type)
        hits = 0
        for s in sims:
            tape = ad.Tape()
            sv = tape.var(s)
            loss = labeled_loss([(sv, lam)], plugin, tape)
            ad.backward(loss)
            if sv.grad <= 0.0:
                hits += 1
        fractions.append(hits / n)
    return fractions


def positivity_theoretical(params, dataset, plugin, lambdas, n, seed,
                           mix_type="embed"):
    """Per-lambda probability from the similarity CDF at the closed-form threshold."""
    if plugin.name not in ("ms", "pa"):
        raise ValueError(
            "the closed-form positivity threshold applies to the "
            f"multi-similarity form, not {plugin.name!r}"
        )
    if n < 1:
        raise ValueError("need at least one sample per grid point")
    hp = plugin.hyperparams
    rng = np.random.default_rng(seed)
    train = dataset.train_split()
    triples = _triple_indices(train, n, rng)
    probs = []
    for lam in lambdas:
        lam = float(lam)
        sims = _mixed_similarities(params, train, triples, lam, mix_type)
        thr = ms_positivity_threshold(lam, hp["beta"], hp["gamma"], hp["margin"])
        probs.append(float(np.mean(sims <= thr)))
    return probs


def positivity_curve(params, dataset, plugin, lambdas, n, seed,
                     mix_type="embed"):
    """Empirical and theoretical positivity over one shared sample set."""
    lambdas = tuple(float(x) for x in lambdas)
    emp = positivity_empirical(params, dataset, plugin, lambdas, n, seed,
                               mix_type=mix_type)
    theo = positivity_theoretical(params, dataset, plugin, lambdas, n, seed,
                                  mix_type=mix_type)
    return PositivityCurve(lambdas=lambdas, empirical=tuple(emp),
                           theoretical=tuple(theo), n=n)


def _embed_all(params, examples):
    return encoder.embed(params, np.stack([e.features for e in examples]))


def _pair_sqdist(emb):
    sq = np.sum(emb * emb, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (emb @ emb.T)
    return np.maximum(d2, 0.0)


def alignment(params, examples):
    """Mean squared embedding distance over same-class pairs (lower = tighter)."""
    emb = _embed_all(params, examples)
    labels = np.array([e.class_id for e in examples])
    upper = np.triu(np.ones((len(examples), len(examples)), dtype=bool), k=1)
    same = upper & (labels[:, None] == labels[None, :])
    if not np.any(same):
        raise ValueError("no same-class pairs to align")
    return float(np.mean(_pair_sqdist(emb)[same]))


def uniformity(params, examples):
    """Log mean Gaussian-kernel similarity over all pairs (lower = more spread)."""
    if len(examples) < 2:
        raise ValueError("need at least two examples")
    emb = _embed_all(params, examples)
    upper = np.triu(np.ones((len(examples), len(examples)), dtype=bool), k=1)
    return float(np.log(np.mean(np.exp(-UNIFORMITY_T * _pair_sqdist(emb)[upper]))))


def utilization(params, queries, entries, mixed_vectors=None):
    """Mean over queries of the squared distance to the nearest stored entry.

    ``entries`` are clean examples encoded by the current model;
    ``mixed_vectors`` are pre-built embedding-space rows (e.g. replayed mixed
    embeddings) appended to the candidate pool.
    """
    if not queries:
        raise ValueError("empty query set")
    candidates = []
    if entries:
        candidates.append(np.atleast_2d(_embed_all(params, entries)))
    if mixed_vectors is not None and len(mixed_vectors):
        candidates.append(np.atleast_2d(np.asarray(mixed_vectors, dtype=np.float64)))
    if not candidates:
        raise ValueError("empty candidate set")
    pool = np.vstack(candidates)
    q = np.atleast_2d(_embed_all(params, queries))
    sq = np.sum(q * q, axis=1)[:, None] + np.sum(pool * pool, axis=1)[None, :] \
        - 2.0 * (q @ pool.T)
    return float(np.mean(np.min(np.maximum(sq, 0.0), axis=1)))


def recall_at_k(params, examples, ks):
    """Fraction of queries whose K nearest neighbors include their class.

    Neighbors are ranked by cosine similarity with the query itself excluded;
    ties break toward the lower index.
    """
    ks = sorted(int(k) for k in ks)
    if ks[0] < 1:
        raise ValueError("K must be >= 1")
    if ks[-1] >= len(examples):
        raise ValueError(f"K={ks[-1]} needs more than {len(examples)} examples")
    emb = _embed_all(params, examples)
    labels = np.array([e.class_id for e in examples])
    sims = emb @ emb.T
    hits = {k: 0 for k in ks}
    for i in range(len(examples)):
        row = sims[i].copy()
        row[i] = -np.inf
        order = np.argsort(-row, kind="stable")
        neighbor_match = labels[order] == labels[i]
        for k in ks:
            if bool(np.any(neighbor_match[:k])):
                hits[k] += 1
    return {k: hits[k] / len(examples) for k in ks}


def evaluate_model(params, test_examples, train_examples, ks=(1, 2, 4),
                   mixed_vectors=None):
    """Bundle the four diagnostics for one model state."""
    return MetricsReport(
        alignment=alignment(params, test_examples),
        uniformity=uniformity(params, test_examples),
        utilization=utilization(params, test_examples, train_examples,
                                mixed_vectors=mixed_vectors),
        recall=recall_at_k(params, test_examples, ks),
    )
