"""Clean/adversarial accuracy, linear CKA and the first-order Taylor residual."""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .adversarial import fgsm_perturbation
from .data import batch_iter
from .errors import DegenerateActivations, DegenerateGradient, EmptyDataset
from .losses import cross_entropy, one_hot
from .nn import forward, pad_weights

EVAL_BATCH = 256


def predict(params, token_ids):
    return np.argmax(forward(params, token_ids).probs.data, axis=1)


def accuracy(params, dataset, batch_size=EVAL_BATCH):
    """Fraction of argmax-correct predictions with dropout off (ties -> lowest class)."""
    if len(dataset) == 0:
        raise EmptyDataset("accuracy of an empty dataset")
    correct = 0
    for b in batch_iter(dataset, batch_size):
        correct += int(np.sum(predict(params, b.token_ids) == b.labels))
    return correct / len(dataset)


def input_gradient(params, token_ids, labels, n_classes):
    """Clean embeddings, pooling weights and the CE input gradient for a batch."""
    x0 = params.groups["emb"][token_ids]
    w = pad_weights(token_ids)
    out = forward(params, embeddings=x0, weights=w)
    loss = cross_entropy(out.probs, one_hot(labels, n_classes))
    return x0, w, ad.grad_wrt_embeddings(out.trace, loss)


def adversarial_predictions(params, token_ids, labels, n_classes, epsilon):
    x0, w, gx = input_gradient(params, token_ids, labels, n_classes)
    delta = fgsm_perturbation(gx, epsilon, on_degenerate="zero").delta
    return np.argmax(forward(params, embeddings=x0 + delta, weights=w).probs.data, axis=1)


def adversarial_accuracy(params, dataset, epsilon, batch_size=EVAL_BATCH):
    """Accuracy after a white-box per-example L2 step of size ``epsilon``."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if len(dataset) == 0:
        raise EmptyDataset("accuracy of an empty dataset")
    correct = 0
    for b in batch_iter(dataset, batch_size):
        pred = adversarial_predictions(params, b.token_ids, b.labels, dataset.n_classes, epsilon)
        correct += int(np.sum(pred == b.labels))
    return correct / len(dataset)


def linear_cka(X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] < 2:
        raise ValueError("linear_cka needs two [n, d] matrices with the same n >= 2")
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    xx = np.linalg.norm(Xc.T @ Xc)
    yy = np.linalg.norm(Yc.T @ Yc)
    if xx < 1e-12 or yy < 1e-12:
        raise DegenerateActivations("centered activations have (near) zero norm")
    return float(np.linalg.norm(Xc.T @ Yc) ** 2 / (xx * yy))


def hidden_features(params, dataset, batch_size=EVAL_BATCH):
    """Inference-mode per-layer features stacked over the dataset."""
    chunks = {}
    for b in batch_iter(dataset, batch_size):
        for name, h in forward(params, b.token_ids).hidden.items():
            chunks.setdefault(name, []).append(h)
    return {k: np.concatenate(v) for k, v in chunks.items()}


def layer_cka(params, reference, dataset):
    a, b = hidden_features(params, dataset), hidden_features(reference, dataset)
    out = {}
    for name in a:
        try:
            out[name] = linear_cka(a[name], b[name])
        except DegenerateActivations:
            out[name] = float("nan")
    return out


# ---------------------------------------------------------------- Taylor residual


def fit_loglog_slope(epsilons, residuals):
    """Least-squares slope of log|R| against log eps; NaN if any residual is exactly 0."""
    e = np.log(np.asarray(epsilons, dtype=np.float64))
    r = np.abs(np.asarray(residuals, dtype=np.float64))
    if np.any(r == 0):
        return float("nan")
    return float(np.polyfit(e, np.log(r), 1)[0])


def taylor_residual_fn(loss_and_grad, x, epsilons):
    """R(eps) = f(x + eps u) - f(x) - eps ||grad f(x)|| with u the unit gradient.

    ``loss_and_grad(x) -> (loss, grad)``. Returns ``(residuals, slope)``.
    """
    eps = np.asarray(epsilons, dtype=np.float64)
    if np.any(eps <= 0):
        raise ValueError("epsilons must be positive")
    if np.log10(eps.max() / eps.min()) < 2 - 1e-9:
        raise ValueError("epsilons must span at least two decades")
    f0, g = loss_and_grad(x)
    gnorm = float(np.sqrt(np.sum(g * g)))
    if gnorm < 1e-12:
        raise DegenerateGradient("input gradient vanishes; residual direction undefined")
    u = g / gnorm
    res = np.array([loss_and_grad(x + e * u)[0] - f0 - e * gnorm for e in eps])
    return res, fit_loglog_slope(eps, res)


def model_loss_and_grad(params, token_ids, label):
    """Closure over a single example: embeddings -> (CE loss, input gradient)."""
    ids = np.asarray(token_ids).reshape(1, -1)
    w = pad_weights(ids)
    y = one_hot([label], params.n_classes)

    def f(x):
        out = forward(params, embeddings=x, weights=w)
        loss = cross_entropy(out.probs, y)
        return loss.item(), ad.grad_wrt_embeddings(out.trace, loss)

    return f, params.groups["emb"][ids]


def taylor_residual(params, example, epsilons):
    """Residuals and log-log slope for ``example = (token_ids, label)``."""
    f, x0 = model_loss_and_grad(params, *example)
    return taylor_residual_fn(f, x0, epsilons)


# ---------------------------------------------------------------- report


@dataclass
class EvalReport:
    clean_accuracy: float
    adversarial_accuracy: dict
    drop: dict
    cka: dict = field(default_factory=dict)
    n: int = 0

    def to_dict(self):
        return asdict(self)


def evaluate(params, dataset, eps_list, reference=None):
    clean = accuracy(params, dataset)
    adv, drop = {}, {}
    for e in eps_list:
        key = repr(float(e))
        adv[key] = adversarial_accuracy(params, dataset, float(e))
        drop[key] = clean - adv[key]
    cka = layer_cka(params, reference, dataset) if reference is not None else {}
    return EvalReport(clean, adv, drop, cka, len(dataset))
