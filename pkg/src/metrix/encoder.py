"""Small MLP encoder with a unit-norm embedding head and optional proxy bank.

The encoder factors as ``embed(x) == head(features(x))``: ``features`` maps
inputs to the hidden representation at the split layer and ``head`` maps that
representation to the l2-normalized embedding. Mixing can therefore happen on
inputs, on split-layer features, or directly on embeddings. Forward passes are
vectorized over rows; matching backward passes (used by the trainer) return
gradients for every layer and for the pass input.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EncoderParams",
    "ProxyBank",
    "RawInput",
    "Embedded",
    "ProxyRef",
    "init_encoder",
    "init_proxies",
    "features",
    "features_forward",
    "features_backward",
    "head",
    "embed",
    "similarity",
    "forward",
    "backward",
    "zero_grads",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class EncoderParams:
    """Layer weights/biases and the split index separating features from head.

    Layer k computes ``tanh(H @ W_k.T + b_k)`` except the last, which is
    linear and followed by row-wise l2 normalization. ``split`` layers belong
    to the feature map, the rest to the head; 1 <= split < number of layers.
    """

    weights: list
    biases: list
    split: int

    @property
    def input_dim(self):
        return int(self.weights[0].shape[1])

    @property
    def embed_dim(self):
        return int(self.weights[-1].shape[0])

    @property
    def feature_dim(self):
        return int(self.weights[self.split - 1].shape[0])


@dataclass
class ProxyBank:
    """One learnable embedding-space vector per training class."""

    class_ids: tuple
    vectors: np.ndarray

    def index_of(self, class_id):
        try:
            return self.class_ids.index(class_id)
        except ValueError:
            raise KeyError(f"no proxy for class {class_id}") from None

    def unit_vector(self, class_id):
        v = self.vectors[self.index_of(class_id)]
        return v / np.linalg.norm(v)

    def renormalize(self):
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        self.vectors /= norms


@dataclass(frozen=True)
class RawInput:
    """An input-space point that still needs encoding."""

    x: np.ndarray


@dataclass(frozen=True)
class Embedded:
    """An embedding-space vector used as-is (e.g. a mixed embedding)."""

    v: np.ndarray


@dataclass(frozen=True)
class ProxyRef:
    """Reference to the learnable proxy of one training class."""

    class_id: int


def init_encoder(input_dim, hidden_dims=(32,), embed_dim=16, split=1,
                 seed=0, init_scale=1.0, embed_bias=0.0):
    """Random layers with zero biases, optionally biasing the embedding layer.

    ``embed_bias`` > 0 sets the last-layer bias to a vector of that norm in a
    random direction, so the untrained model starts with all embeddings in a
    cone: pairwise similarities concentrate in a band below 1 instead of
    spreading over [-1, 1], the way features of a generically pretrained
    backbone do before metric training.
    """
    if not hidden_dims:
        raise ValueError("need at least one hidden layer to split at")
    dims = [input_dim, *hidden_dims, embed_dim]
    n_layers = len(dims) - 1
    if not 1 <= split < n_layers:
        raise ValueError(f"split must be in [1, {n_layers - 1}], got {split}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, init_scale / np.sqrt(fan_in),
                                  size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    if embed_bias > 0.0:
        direction = rng.standard_normal(embed_dim)
        biases[-1] = embed_bias * direction / np.linalg.norm(direction)
    return EncoderParams(weights=weights, biases=biases, split=split)


def init_proxies(train_classes, embed_dim, seed=0):
    """Proxies start uniform on the unit sphere, one per training class."""
    class_ids = tuple(sorted(train_classes))
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((len(class_ids), embed_dim))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return ProxyBank(class_ids=class_ids, vectors=vectors)


def _rows(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _check_dim(x, expected, what):
    if x.shape[1] != expected:
        raise ValueError(f"{what} has dimension {x.shape[1]}, expected {expected}")


def forward(params, x, start_layer=0):
    """Run layers ``start_layer..end`` and normalize; returns (embeddings, cache)."""
    h, squeeze = _rows(x)
    _check_dim(h, params.weights[start_layer].shape[1],
               "features" if start_layer else "input")
    n_layers = len(params.weights)
    acts = [h]
    for k in range(start_layer, n_layers - 1):
        h = np.tanh(h @ params.weights[k].T + params.biases[k])
        acts.append(h)
    z = h @ params.weights[-1].T + params.biases[-1]
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero vector reached the normalization layer")
    emb = z / norms[:, None]
    cache = {"start": start_layer, "acts": acts, "emb": emb,
             "norms": norms, "squeeze": squeeze}
    return (emb[0] if squeeze else emb), cache


def backward(params, cache, d_emb):
    """Backprop through the layers run by :func:`forward`.

    Returns (grads, d_input) where grads maps absolute layer index k to
    (dW_k, db_k) for every layer at or after the cached start, and d_input is
    the gradient with respect to the pass input.
    """
    start = cache["start"]
    acts = cache["acts"]
    emb, norms = cache["emb"], cache["norms"]
    d_emb = np.atleast_2d(np.asarray(d_emb, dtype=np.float64))
    dz = (d_emb - emb * np.sum(emb * d_emb, axis=1, keepdims=True)) / norms[:, None]
    grads = {}
    n_layers = len(params.weights)
    d_out = dz
    for k in range(n_layers - 1, start - 1, -1):
        h_in = acts[k - start]
        if k < n_layers - 1:
            h_out = acts[k - start + 1]
            d_out = d_out * (1.0 - h_out * h_out)
        grads[k] = (d_out.T @ h_in, d_out.sum(axis=0))
        d_out = d_out @ params.weights[k]
    d_input = d_out[0] if cache["squeeze"] else d_out
    return grads, d_input


def features(params, x):
    """Hidden representation at the split layer (the feature-mixing site)."""
    f, _ = features_forward(params, x)
    return f


def features_forward(params, x):
    """Feature-map prefix (tanh layers up to the split) with a backward cache."""
    h, squeeze = _rows(x)
    _check_dim(h, params.input_dim, "input")
    acts = [h]
    for k in range(params.split):
        h = np.tanh(h @ params.weights[k].T + params.biases[k])
        acts.append(h)
    cache = {"acts": acts, "squeeze": squeeze}
    return (h[0] if squeeze else h), cache


def features_backward(params, cache, d_feat):
    """Backprop through the feature-map prefix; returns (grads, d_input)."""
    acts = cache["acts"]
    d_out = np.atleast_2d(np.asarray(d_feat, dtype=np.float64))
    grads = {}
    for k in range(params.split - 1, -1, -1):
        h_out = acts[k + 1]
        d_out = d_out * (1.0 - h_out * h_out)
        grads[k] = (d_out.T @ acts[k], d_out.sum(axis=0))
        d_out = d_out @ params.weights[k]
    return grads, (d_out[0] if cache["squeeze"] else d_out)


def head(params, f):
    """Embedding from split-layer features; rows come out unit-norm."""
    emb, _ = forward(params, f, start_layer=params.split)
    return emb


def embed(params, x):
    emb, _ = forward(params, x, start_layer=0)
    return emb


def zero_grads(params):
    return {k: (np.zeros_like(w), np.zeros_like(b))
            for k, (w, b) in enumerate(zip(params.weights, params.biases))}


def _resolve(item, params, proxies):
    if isinstance(item, RawInput):
        return embed(params, item.x)
    if isinstance(item, Embedded):
        return np.asarray(item.v, dtype=np.float64)
    if isinstance(item, ProxyRef):
        if proxies is None:
            raise ValueError("proxy reference given but no proxy bank supplied")
        return proxies.unit_vector(item.class_id)
    raise TypeError(f"cannot interpret {type(item).__name__} as input/embedding/proxy")


def similarity(a, b, params, proxies=None):
    """Inner product in embedding space; cosine when both sides are unit-norm."""
    va = _resolve(a, params, proxies)
    vb = _resolve(b, params, proxies)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    return float(va @ vb)


def save_checkpoint(params, proxies, path):
    """Round-trip-exact text dump of encoder layers and proxies."""
    lines = [f"layers {len(params.weights)} split {params.split}"]
    for w, b in zip(params.weights, params.biases):
        lines.append(f"layer {w.shape[0]} {w.shape[1]}")
        lines.append(" ".join(repr(float(v)) for v in w.ravel()))
        lines.append(" ".join(repr(float(v)) for v in b))
    if proxies is None:
        lines.append("proxies 0 0")
    else:
        lines.append(f"proxies {len(proxies.class_ids)} {proxies.vectors.shape[1]}")
        for cid, row in zip(proxies.class_ids, proxies.vectors):
            lines.append(f"{cid} " + " ".join(repr(float(v)) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    head_toks = lines[0].split()
    n_layers, split = int(head_toks[1]), int(head_toks[3])
    weights, biases = [], []
    at = 1
    for _ in range(n_layers):
        out_dim, in_dim = (int(t) for t in lines[at].split()[1:])
        w = np.array([float(t) for t in lines[at + 1].split()])
        weights.append(w.reshape(out_dim, in_dim))
        biases.append(np.array([float(t) for t in lines[at + 2].split()]))
        at += 3
    n_proxies, d = (int(t) for t in lines[at].split()[1:])
    at += 1
    proxies = None
    if n_proxies:
        class_ids, rows = [], []
        for _ in range(n_proxies):
            toks = lines[at].split()
            class_ids.append(int(toks[0]))
            rows.append([float(t) for t in toks[1:]])
            at += 1
        proxies = ProxyBank(class_ids=tuple(class_ids),
                            vectors=np.array(rows).reshape(n_proxies, d))
    return EncoderParams(weights=weights, biases=biases, split=split), proxies
