"""Generic pair/proxy loss calculus with pluggable component functions.

A plugin bundles five unary scalar functions (tau, sigma+, sigma-, rho+,
rho-). The generic loss applies rho to each similarity, sums per side,
applies sigma per side and tau to the total. The label-weighted form
multiplies each element's rho+ term by its label y and its rho- term by
1 - y, which reduces to the generic form for binary labels and accepts the
fractional labels produced by mixing. All component functions are built from
tape primitives, so every loss here is differentiable end to end.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad

__all__ = [
    "LossPlugin",
    "LabeledSimilarity",
    "AnchorContext",
    "generic_loss",
    "labeled_loss",
    "mixed_loss",
    "total_error",
    "contrastive",
    "lifted_structure",
    "binomial_deviance",
    "multi_similarity",
    "proxy_anchor",
    "nca",
    "proxy_nca",
    "proxy_nca_pp",
    "PLUGIN_NAMES",
    "make_plugin",
]


@dataclass(frozen=True)
class LossPlugin:
    """One loss as a bundle of component functions plus dispatch flags.

    ``needs_positives``/``needs_negatives`` mark sides whose sigma is
    logarithmic and therefore undefined on an empty (zero) sum; anchors
    lacking that side must be skipped rather than evaluated.
    """

    name: str
    tau: callable
    sigma_pos: callable
    sigma_neg: callable
    rho_pos: callable
    rho_neg: callable
    hyperparams: dict = field(default_factory=dict)
    anchor_is_proxy: bool = False
    elements_are_proxies: bool = False
    needs_positives: bool = False
    needs_negatives: bool = False


class LabeledSimilarity(NamedTuple):
    """A similarity with its two-class label: 1 positive, 0 negative, mixed in between."""

    s: float
    y: float


@dataclass
class AnchorContext:
    """An anchor and its labeled similarity set, ready for loss evaluation."""

    anchor: object
    labeled: list


def _as_var(s, tape):
    return s if isinstance(s, ad.Var) else tape.var(s)


def generic_loss(positives, negatives, plugin, tape):
    """Loss of one anchor given its positive and negative similarities.

    ``positives``/``negatives`` are sequences of similarity values (floats or
    tape variables). An absent side contributes sigma(0) when that is
    defined; for log-sigma plugins it is a domain error.
    """
    positives = list(positives)
    negatives = list(negatives)
    if not positives and not negatives:
        raise ValueError("anchor has neither positives nor negatives")
    if plugin.needs_positives and not positives:
        raise ad.DomainError(f"{plugin.name} loss is undefined without positives")
    if plugin.needs_negatives and not negatives:
        raise ad.DomainError(f"{plugin.name} loss is undefined without negatives")
    pos_sum = ad.vsum([plugin.rho_pos(_as_var(s, tape)) for s in positives], tape)
    neg_sum = ad.vsum([plugin.rho_neg(_as_var(s, tape)) for s in negatives], tape)
    return plugin.tau(plugin.sigma_pos(pos_sum) + plugin.sigma_neg(neg_sum))


def labeled_loss(items, plugin, tape):
    """Label-weighted loss: y weights the positive term, 1-y the negative.

    ``items`` is a sequence of (similarity, label) pairs or an
    :class:`AnchorContext`. Exactly-zero weights contribute nothing, so with
    binary labels this equals :func:`generic_loss` on the induced partition.
    """
    items = getattr(items, "labeled", items)
    items = list(items)
    if not items:
        raise ValueError("empty labeled set")
    pos_terms, neg_terms = [], []
    for s, y in items:
        y = float(y)
        if not 0.0 <= y <= 1.0:
            raise ValueError(f"label {y} outside [0, 1]")
        sv = _as_var(s, tape)
        if y != 0.0:
            t = plugin.rho_pos(sv)
            pos_terms.append(t if y == 1.0 else t * y)
        if y != 1.0:
            t = plugin.rho_neg(sv)
            neg_terms.append(t if y == 0.0 else t * (1.0 - y))
    if plugin.needs_positives and not pos_terms:
        raise ad.DomainError(f"{plugin.name} loss is undefined without positive weight")
    if plugin.needs_negatives and not neg_terms:
        raise ad.DomainError(f"{plugin.name} loss is undefined without negative weight")
    pos_sum = ad.vsum(pos_terms, tape)
    neg_sum = ad.vsum(neg_terms, tape)
    return plugin.tau(plugin.sigma_pos(pos_sum) + plugin.sigma_neg(neg_sum))


def mixed_loss(anchor_vec, mixed, plugin, tape):
    """Labeled loss over a set of mixed embeddings against one anchor vector.

    ``anchor_vec`` lives in embedding space (an encoded example or a
    normalized proxy); similarities are inner products in that space.
    """
    mixed = list(mixed)
    if not mixed:
        raise ValueError("empty mixed set")
    anchor_vec = np.asarray(anchor_vec, dtype=np.float64)
    items = [(float(anchor_vec @ m.v), m.y) for m in mixed]
    return labeled_loss(items, plugin, tape)


def total_error(clean_losses, mixed_losses, w, tape):
    """Per-batch objective: mean over anchors of clean + w * mixed loss.

    ``mixed_losses`` entries may be None for anchors whose mixing-pair set
    was empty; those anchors contribute their clean loss only.
    """
    if w < 0:
        raise ValueError(f"mixing strength must be >= 0, got {w}")
    clean_losses = list(clean_losses)
    mixed_losses = list(mixed_losses)
    if len(clean_losses) != len(mixed_losses):
        raise ValueError("need one clean and one mixed loss slot per anchor")
    if not clean_losses:
        raise ValueError("no anchors")
    terms = []
    for lc, lm in zip(clean_losses, mixed_losses):
        if lm is None or w == 0.0:
            terms.append(lc)
        else:
            terms.append(lc + lm * float(w))
    return ad.vsum(terms, tape) * (1.0 / len(terms))


# --- Plugin constructors -------------------------------------------------

def _identity(x):
    return x


def _require_positive(**kwargs):
    for key, value in kwargs.items():
        if value <= 0:
            raise ValueError(f"{key} must be positive, got {value}")


def contrastive(margin=0.9):
    """Pull positives, push negatives below a similarity margin."""
    m = float(margin)
    return LossPlugin(
        name="contrastive",
        tau=_identity,
        sigma_pos=_identity,
        sigma_neg=_identity,
        rho_pos=lambda x: -x,
        rho_neg=lambda x: ad.hinge(x - m),
        hyperparams={"margin": m},
    )


def lifted_structure(margin=0.5):
    """Hinged log-sum-exp over both sides; needs both sides nonempty."""
    m = float(margin)
    return LossPlugin(
        name="lifted",
        tau=ad.hinge,
        sigma_pos=ad.log,
        sigma_neg=ad.log,
        rho_pos=lambda x: ad.exp(-x),
        rho_neg=lambda x: ad.exp(x - m),
        hyperparams={"margin": m},
        needs_positives=True,
        needs_negatives=True,
    )


def binomial_deviance(beta=2.0, gamma=0.5, margin=0.5):
    b, g, m = float(beta), float(gamma), float(margin)
    _require_positive(beta=b, gamma=g)
    return LossPlugin(
        name="deviance",
        tau=_identity,
        sigma_pos=lambda x: ad.log(x + 1.0),
        sigma_neg=lambda x: ad.log(x + 1.0),
        rho_pos=lambda x: ad.exp((x - m) * -b),
        rho_neg=lambda x: ad.exp((x - m) * g),
        hyperparams={"beta": b, "gamma": g, "margin": m},
    )


def multi_similarity(beta=18.0, gamma=75.0, margin=0.77):
    """Relative weighting of hard positives/negatives via scaled softplus sums."""
    b, g, m = float(beta), float(gamma), float(margin)
    _require_positive(beta=b, gamma=g)
    return LossPlugin(
        name="ms",
        tau=_identity,
        sigma_pos=lambda x: ad.log(x + 1.0) * (1.0 / b),
        sigma_neg=lambda x: ad.log(x + 1.0) * (1.0 / g),
        rho_pos=lambda x: ad.exp((x - m) * -b),
        rho_neg=lambda x: ad.exp((x - m) * g),
        hyperparams={"beta": b, "gamma": g, "margin": m},
    )


def proxy_anchor(beta=32.0, gamma=32.0, margin=0.1):
    """Multi-similarity form with class proxies taking the anchor slot."""
    base = multi_similarity(beta, gamma, margin)
    return LossPlugin(
        name="pa",
        tau=base.tau,
        sigma_pos=base.sigma_pos,
        sigma_neg=base.sigma_neg,
        rho_pos=base.rho_pos,
        rho_neg=base.rho_neg,
        hyperparams=dict(base.hyperparams),
        anchor_is_proxy=True,
    )


def _nca_components():
    return dict(
        tau=_identity,
        sigma_pos=lambda x: -ad.log(x),
        sigma_neg=ad.log,
        rho_pos=ad.exp,
        rho_neg=ad.exp,
        needs_positives=True,
        needs_negatives=True,
    )


def nca():
    return LossPlugin(name="nca", hyperparams={}, **_nca_components())


def proxy_nca():
    """NCA with proxies in the positive/negative slots."""
    return LossPlugin(name="pnca", hyperparams={},
                      elements_are_proxies=True, **_nca_components())


def proxy_nca_pp(temperature=0.1):
    t = float(temperature)
    _require_positive(temperature=t)
    parts = _nca_components()
    parts["rho_pos"] = lambda x: ad.exp(x * (1.0 / t))
    parts["rho_neg"] = lambda x: ad.exp(x * (1.0 / t))
    return LossPlugin(name="pncapp", hyperparams={"temperature": t},
                      elements_are_proxies=True, **parts)


PLUGIN_NAMES = ("contrastive", "lifted", "deviance", "ms", "pa", "nca",
                "pnca", "pncapp")

_BUILDERS = {
    "contrastive": (contrastive, ("margin",)),
    "lifted": (lifted_structure, ("margin",)),
    "deviance": (binomial_deviance, ("beta", "gamma", "margin")),
    "ms": (multi_similarity, ("beta", "gamma", "margin")),
    "pa": (proxy_anchor, ("beta", "gamma", "margin")),
    "nca": (nca, ()),
    "pnca": (proxy_nca, ()),
    "pncapp": (proxy_nca_pp, ("temperature",)),
}


def make_plugin(name, **hyper):
    """Build a plugin by registry name, using each loss's defaults for
    hyperparameters that are not supplied (or supplied as None)."""
    if name not in _BUILDERS:
        valid = ", ".join(PLUGIN_NAMES)
        raise ValueError(f"unknown loss {name!r}; valid names: {valid}")
    builder, accepted = _BUILDERS[name]
    kwargs = {k: v for k, v in hyper.items() if k in accepted and v is not None}
    return builder(**kwargs)
