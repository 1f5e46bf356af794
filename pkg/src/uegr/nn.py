"""Embedding -> masked mean-pool -> 2 x (linear, tanh, dropout) -> linear classifier."""

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import RateOutOfRange, ShapeMismatch, TokenOutOfVocab

CHECKPOINT_FORMAT = "uegr-checkpoint"
CHECKPOINT_VERSION = 1

DROP_FLOOR, DROP_CEIL = 0.05, 0.95
_GUARD = 1e-12


@dataclass
class ModelParams:
    """Parameter groups keyed by stable identifiers, in registration order."""

    vocab_size: int
    emb_dim: int
    hidden: tuple
    n_classes: int
    groups: dict = field(default_factory=dict)

    @property
    def names(self):
        return list(self.groups)

    def n_params(self):
        return int(sum(g.size for g in self.groups.values()))

    def copy(self):
        return ModelParams(
            self.vocab_size,
            self.emb_dim,
            tuple(self.hidden),
            self.n_classes,
            {k: v.copy() for k, v in self.groups.items()},
        )

    def with_groups(self, groups):
        return ModelParams(self.vocab_size, self.emb_dim, tuple(self.hidden), self.n_classes, groups)

    def layer_names(self):
        return [f"fc{i + 1}" for i in range(len(self.hidden))]


def expected_param_count(vocab_size, emb_dim, hidden, n_classes):
    dims = [emb_dim, *hidden, n_classes]
    return vocab_size * emb_dim + int(sum(a * b + b for a, b in zip(dims[:-1], dims[1:])))


def init_params(vocab_size, n_classes, emb_dim=16, hidden=(32, 32), seed=0, emb_scale=1.0):
    """Gaussian embeddings and Glorot-uniform linear layers, zero biases."""
    rng = np.random.default_rng(seed)
    groups = {"emb": rng.normal(0.0, emb_scale, size=(vocab_size, emb_dim))}
    dims = [emb_dim, *hidden]
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        groups[f"fc{i + 1}.w"] = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        groups[f"fc{i + 1}.b"] = np.zeros(fan_out)
    lim = np.sqrt(6.0 / (dims[-1] + n_classes))
    groups["out.w"] = rng.uniform(-lim, lim, size=(dims[-1], n_classes))
    groups["out.b"] = np.zeros(n_classes)
    return ModelParams(vocab_size, emb_dim, tuple(hidden), n_classes, groups)


# ---------------------------------------------------------------- dropout


@dataclass
class DropoutMask:
    """Keep indicators per dropout site, the keep probabilities behind them, and the pass index."""

    indicators: list
    keep_prob: list
    pass_index: int = 0

    def scales(self):
        return [ind / kp for ind, kp in zip(self.indicators, self.keep_prob)]


def drop_probabilities(n_units, base_rate, grad_norms=None):
    if not 0.0 <= base_rate < 1.0:
        raise RateOutOfRange(f"base rate must lie in [0, 1), got {base_rate}")
    if grad_norms is None:
        return np.full(n_units, float(base_rate))
    n = np.asarray(grad_norms, dtype=np.float64)
    if n.shape != (n_units,) or not np.all(np.isfinite(n)) or np.any(n < 0):
        raise ValueError("gradient norms must be finite, nonnegative, one per unit")
    spread = n.max() - n.min() + _GUARD
    return np.clip(base_rate * (1.0 + (n - n.mean()) / spread), DROP_FLOOR, DROP_CEIL)


def sample_adaptive_mask(site_shapes, base_rate, rng, grad_norms=None, pass_index=0):
    """Sample one :class:`DropoutMask` for sites of shape ``(batch, units)``.

    With ``grad_norms`` absent every unit drops with ``base_rate``. Otherwise
    each site's per-unit drop rate rises with its activation-gradient norm,
    clamped to [0.05, 0.95].
    """
    indicators, keep = [], []
    for k, shape in enumerate(site_shapes):
        units = shape[-1]
        norms = None if grad_norms is None else grad_norms[k]
        q = drop_probabilities(units, base_rate, norms)
        indicators.append((rng.random(shape) >= q).astype(np.float64))
        keep.append(1.0 - q)
    return DropoutMask(indicators, keep, pass_index)


def all_keep_mask(site_shapes):
    return DropoutMask([np.ones(s) for s in site_shapes], [np.ones(s[-1]) for s in site_shapes])


def site_shapes(params, batch):
    return [(batch, h) for h in params.hidden]


# ---------------------------------------------------------------- forward


@dataclass
class ForwardOutput:
    logits: ad.Tensor
    log_probs: ad.Tensor
    probs: ad.Tensor
    hidden: dict
    hidden_tensors: dict
    embeddings: ad.Tensor
    mask: DropoutMask
    trace: ad.Trace


def pad_weights(token_ids, pad_id=0):
    return (np.asarray(token_ids) != pad_id).astype(np.float64)


def embed(params, token_ids, trace):
    ids = np.asarray(token_ids)
    if ids.ndim != 2 or not np.issubdtype(ids.dtype, np.integer):
        raise ShapeMismatch(f"token ids must be a 2-D integer array, got {ids.shape} {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= params.vocab_size):
        raise TokenOutOfVocab(f"token id outside [0, {params.vocab_size})")
    table = trace.param("emb", params.groups["emb"]) if trace is not None else params.groups["emb"]
    return ad.take_rows(table, ids)


def forward(params, token_ids=None, *, embeddings=None, weights=None, mask=None, trace=None):
    """Run the classifier; ``mask=None`` means inference (no dropout).

    Pass ``token_ids`` to look embeddings up from the table, or ``embeddings``
    (array registered as the input leaf, or a tensor already on ``trace``).
    ``weights`` excludes PAD positions from pooling and defaults to
    ``token_ids != PAD``.
    """
    if trace is None:
        trace = ad.Trace()
    if embeddings is None:
        if token_ids is None:
            raise ValueError("forward needs token_ids or embeddings")
        x = embed(params, token_ids, trace)
    elif isinstance(embeddings, ad.Tensor):
        x = embeddings
    else:
        x = trace.embedding_input(embeddings)
    if x.ndim != 3 or x.shape[-1] != params.emb_dim:
        raise ShapeMismatch(f"embeddings must be [batch, seq, {params.emb_dim}], got {x.shape}")
    if weights is None:
        weights = pad_weights(token_ids) if token_ids is not None else np.ones(x.shape[:2])
    batch = x.shape[0]
    if mask is not None:
        expected = site_shapes(params, batch)
        if [tuple(m.shape) for m in mask.indicators] != expected:
            raise ShapeMismatch("dropout mask does not match the activation shapes")
        scales = mask.scales()

    g = params.groups
    h = ad.masked_mean(x, weights)
    hidden = {"pooled": h.data}
    tensors = {}
    for i, name in enumerate(params.layer_names()):
        h = ad.tanh(ad.matmul(h, trace.param(f"{name}.w", g[f"{name}.w"])) + trace.param(f"{name}.b", g[f"{name}.b"]))
        hidden[name] = h.data
        tensors[name] = h
        if mask is not None:
            h = h * scales[i]
    logits = ad.matmul(h, trace.param("out.w", g["out.w"])) + trace.param("out.b", g["out.b"])
    logp = ad.log_softmax(logits)
    return ForwardOutput(logits, logp, ad.exp(logp), hidden, tensors, x, mask, trace)


def predict_proba(params, token_ids):
    """Inference-mode class probabilities as a plain array."""
    return forward(params, token_ids).probs.data


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(params, path):
    """Write a JSON checkpoint; float repr makes the round trip exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "vocab_size": params.vocab_size,
        "emb_dim": params.emb_dim,
        "hidden": list(params.hidden),
        "n_classes": params.n_classes,
        "groups": [
            {"name": k, "shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in params.groups.items()
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    groups = {}
    for grp in doc["groups"]:
        arr = np.array(grp["data"], dtype=np.float64)
        if arr.size != int(np.prod(grp["shape"])):
            raise ShapeMismatch(f"{path}: group {grp['name']} has {arr.size} values for shape {grp['shape']}")
        groups[grp["name"]] = arr.reshape(grp["shape"])
    return ModelParams(doc["vocab_size"], doc["emb_dim"], tuple(doc["hidden"]), doc["n_classes"], groups)
