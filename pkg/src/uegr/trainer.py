"""Bi-stage training: adversarial multi-pass forward stage, saliency-masked backward stage."""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import saliency as sal
from .adversarial import fgsm_perturbation
from .data import batch_iter, epoch_seed
from .errors import ConfigInvalid, NonFiniteLoss, NonFiniteResult, ShapeMismatch, StepOutOfRange
from .evaluate import accuracy, adversarial_accuracy
from .losses import LossBundle, adv_loss, cross_entropy, one_hot, pairwise_js, total_loss
from .nn import embed, forward, init_params, pad_weights, sample_adaptive_mask, site_shapes

log = logging.getLogger(__name__)

STEP_CSV_COLUMNS = ("step", "lr", "l_st", "l_adv", "l_div", "l_train", "masked_fraction")


@dataclass
class TrainConfig:
    epsilon: float = 0.1
    lam: float = 0.01
    alpha: float = 0.8
    beta: float = 1.0
    eta: float = 0.5
    K: int = 2
    dropout_rate: float = 0.4
    dropout_mode: str = "fixed"
    orientation: str = sal.UPDATE_SALIENT
    clean_pass_dropout: bool = False
    saliency_mode: str = sal.EXACT
    optimizer: str = "sgd"
    weight_decay: float = 0.01
    batch_size: int = 16
    epochs: int = 10
    warmup_ratio: float = 0.06
    seed: int = 0
    use_adv: bool = True
    use_div: bool = True
    use_selective_update: bool = True
    use_dropout: bool = True
    force_unit_p: bool = False
    emb_dim: int = 16
    hidden: tuple = (32, 32)
    emb_init_scale: float = 1.0
    report_eps: tuple = (0.01, 0.1, 0.4)

    def validate(self):
        checks = [
            ("epsilon", self.epsilon >= 0, "must be >= 0"),
            ("lam", self.lam >= 0, "must be >= 0"),
            ("beta", self.beta > 0, "must be > 0"),
            ("eta", self.eta >= 0, "must be >= 0"),
            ("K", self.K >= 1, "must be >= 1"),
            ("K", not (self.use_div and self.K < 2), "must be >= 2 when use_div is on"),
            ("dropout_rate", 0 <= self.dropout_rate < 1, "must lie in [0, 1)"),
            ("dropout_mode", self.dropout_mode in ("fixed", "adaptive"), "fixed or adaptive"),
            ("orientation", self.orientation in sal.ORIENTATIONS, "update_salient or paper_literal"),
            ("saliency_mode", self.saliency_mode in (sal.EXACT, sal.APPROX), "exact or approx"),
            ("optimizer", self.optimizer in ("sgd", "adamw"), "sgd or adamw"),
            ("weight_decay", self.weight_decay >= 0, "must be >= 0"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("epochs", self.epochs >= 0, "must be >= 0"),
            ("warmup_ratio", 0 <= self.warmup_ratio < 1, "must lie in [0, 1)"),
            ("emb_dim", self.emb_dim >= 1, "must be >= 1"),
            ("hidden", len(self.hidden) >= 1 and all(h >= 1 for h in self.hidden), "positive layer widths"),
            ("report_eps", all(e >= 0 for e in self.report_eps), "must be >= 0"),
        ]
        for key, ok, why in checks:
            if not ok:
                raise ConfigInvalid(key, why)
        return self

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["report_eps"] = list(self.report_eps)
        return d

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------- schedule & optimizers


def lr_at_step(step, total_steps, cfg):
    """Linear warmup to ``cfg.eta`` over ``warmup_ratio * total`` steps, then linear decay to 0."""
    if not 0 <= step <= total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {total_steps}]")
    warm = cfg.warmup_ratio * total_steps
    if step < warm:
        return cfg.eta * step / warm
    if total_steps == warm:
        return 0.0
    return cfg.eta * (total_steps - step) / (total_steps - warm)


def _check_shapes(params, grad):
    for k, v in params.items():
        if grad[k].shape != v.shape:
            raise ShapeMismatch(f"{k}: param {v.shape} vs grad {grad[k].shape}")


def sgd_step(params, grad, lr):
    _check_shapes(params, grad)
    return {k: v - lr * grad[k] for k, v in params.items()}


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grad, lr, state, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
    """Decoupled weight decay then a bias-corrected Adam step."""
    _check_shapes(params, grad)
    t = state.t + 1
    out, m_new, v_new = {}, {}, {}
    for k, theta in params.items():
        g = grad[k]
        m = beta1 * state.m.get(k, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(k, 0.0) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        decayed = theta * (1 - lr * weight_decay)
        out[k] = decayed - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[k], v_new[k] = m, v
    return out, AdamState(t, m_new, v_new)


# ---------------------------------------------------------------- one step


@dataclass
class TrainRngs:
    """Independent streams, so toggling one mechanism never shifts another's draws."""

    dropout: np.random.Generator
    mask: np.random.Generator

    @classmethod
    def from_seed(cls, seed):
        a, b = np.random.SeedSequence(int(seed)).spawn(2)
        return cls(np.random.default_rng(a), np.random.default_rng(b))


@dataclass
class StepResult:
    params: object
    losses: LossBundle
    saliency: object
    opt_state: object
    grad_norms: object
    grad: dict


def _masks_for(cfg, params, batch, rng, grad_norms, k):
    if not cfg.use_dropout:
        return None
    norms = grad_norms if cfg.dropout_mode == "adaptive" else None
    return sample_adaptive_mask(site_shapes(params, batch), cfg.dropout_rate, rng, norms, pass_index=k)


def train_step(params, batch, cfg, rngs, lr, opt_state=None, grad_norms=None):
    """One iteration of the bi-stage update on ``batch``.

    Forward stage: clean loss, an L2 input step along the clean-loss
    gradient, ``K`` dropout passes on the perturbed input, their mean CE
    and pairwise JS. Backward stage: per-example gradients of the total
    loss feed the saliency mask, and the rescaled masked gradient is handed
    to the optimizer.
    """
    ids, labels = batch.token_ids, batch.labels
    B = len(labels)
    if B == 0:
        raise ValueError("empty batch")
    y = one_hot(labels, params.n_classes)
    w = pad_weights(ids)
    g = params.groups
    adaptive = cfg.use_dropout and cfg.dropout_mode == "adaptive"
    run_passes = cfg.use_adv or cfg.use_div
    clean_mask = (
        _masks_for(cfg, params, B, rngs.dropout, grad_norms, 0) if cfg.clean_pass_dropout else None
    )

    try:
        delta = None
        if cfg.use_adv:
            probe = forward(params, embeddings=g["emb"][ids], weights=w, mask=clean_mask)
            l_probe = cross_entropy(probe.probs, y)
            gx = ad.grad_wrt_embeddings(probe.trace, l_probe)
            delta = fgsm_perturbation(gx, cfg.epsilon, on_degenerate="zero").delta

        trace = ad.Trace()
        x = embed(params, ids, trace)
        clean = forward(params, embeddings=x, weights=w, mask=clean_mask, trace=trace)
        l_st = cross_entropy(clean.probs, y)
        l_train, l_adv, l_div = l_st, None, None
        dists, watch = [], []
        if run_passes:
            x_in = x + delta if delta is not None else x
            for k in range(cfg.K):
                mk = _masks_for(cfg, params, B, rngs.dropout, grad_norms, k + 1)
                out = forward(params, embeddings=x_in, weights=w, mask=mk, trace=trace)
                dists.append(out.probs)
                watch.extend(out.hidden_tensors.values())
            l_adv = adv_loss(dists, y)
            if cfg.use_div and cfg.K >= 2:
                l_div = pairwise_js(dists)
            l_train = total_loss(l_st, l_adv, l_div if l_div is not None else 0.0, cfg.lam)

        res = ad.backward_full(
            trace,
            l_train,
            per_example=cfg.use_selective_update,
            watch=watch if adaptive else (),
        )
    except NonFiniteResult as exc:
        raise NonFiniteLoss(f"non-finite value in step: {exc}", {"lr": lr, "batch": batch.index.tolist()}) from exc

    grad = {k: res.grads[k] for k in g}
    state = None
    if cfg.use_selective_update:
        per_ex = {k: res.per_example[k] * B for k in g}
        state = sal.saliency_state(
            per_ex,
            cfg.alpha,
            cfg.beta,
            rngs.mask,
            mode=cfg.saliency_mode,
            orientation=cfg.orientation,
            force_unit_p=cfg.force_unit_p,
        )
        update = sal.masked_gradient(grad, state.mask, state.p)
    else:
        update = grad

    if cfg.optimizer == "sgd":
        new, opt_state = sgd_step(g, update, lr), opt_state
    else:
        new, opt_state = adamw_step(g, update, lr, opt_state or AdamState(), cfg.weight_decay)
    bad = [k for k, v in new.items() if not np.all(np.isfinite(v))]
    if bad:
        raise NonFiniteLoss(f"non-finite parameters after update: {bad}", {"lr": lr, "groups": bad})

    new_norms = None
    if adaptive:
        n_sites = len(params.hidden)
        sq = [np.zeros(h) for h in params.hidden]
        for i, t in enumerate(watch):
            gw = res.watched[t.index]
            sq[i % n_sites] += np.sum(gw * gw, axis=0)
        new_norms = [np.sqrt(s) for s in sq]

    bundle = LossBundle(
        l_st=l_st.item(),
        l_adv=l_adv.item() if l_adv is not None else 0.0,
        l_div=l_div.item() if l_div is not None else 0.0,
        l_train=l_train.item(),
        dists=[d.data for d in dists],
    )
    if not all(math.isfinite(v) for v in (bundle.l_st, bundle.l_adv, bundle.l_div, bundle.l_train)):
        raise NonFiniteLoss("non-finite loss", asdict(bundle) | {"dists": None})
    return StepResult(params.with_groups(new), bundle, state, opt_state, new_norms, grad)


# ---------------------------------------------------------------- full run


@dataclass
class EpochStats:
    epoch: int
    l_st: float
    l_adv: float
    l_div: float
    l_train: float
    clean_accuracy: float
    adversarial_accuracy: dict
    masked_fraction_mean: float
    masked_fraction_min: float
    masked_fraction_max: float


@dataclass
class TrainReport:
    config: dict
    n_params: int
    steps: int = 0
    epochs: list = field(default_factory=list)
    wall_time: float = None

    def to_dict(self, include_time=False):
        d = {"config": self.config, "n_params": self.n_params, "steps": self.steps,
             "epochs": [asdict(e) for e in self.epochs]}
        if include_time:
            d["wall_time"] = self.wall_time
        return d


def train(dataset, cfg, *, eval_data=None, params=None, step_csv=None, on_epoch=None):
    """Run ``cfg.epochs`` epochs; returns ``(params, TrainReport)``.

    Everything derives from ``cfg.seed``: the initialization, the dropout and
    mask streams, and each epoch's shuffle.
    """
    import time

    cfg.validate()
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    t0 = time.perf_counter()
    if params is None:
        params = init_params(
            len(dataset.vocab), dataset.n_classes, cfg.emb_dim, cfg.hidden, seed=cfg.seed, emb_scale=cfg.emb_init_scale
        )
    rngs = TrainRngs.from_seed(cfg.seed)
    per_epoch = math.ceil(len(dataset) / cfg.batch_size)
    total = per_epoch * cfg.epochs
    report = TrainReport(cfg.to_dict(), params.n_params())
    eval_data = eval_data if eval_data is not None else dataset

    writer, fh = None, None
    if step_csv is not None:
        fh = open(step_csv, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh)
        writer.writerow(STEP_CSV_COLUMNS)
    opt_state, norms, step = None, None, 0
    try:
        for epoch in range(cfg.epochs):
            sums = np.zeros(4)
            fracs = []
            for batch in batch_iter(dataset, cfg.batch_size, epoch_seed(cfg.seed, epoch)):
                lr = lr_at_step(step, total, cfg)
                r = train_step(params, batch, cfg, rngs, lr, opt_state, norms)
                params, opt_state, norms = r.params, r.opt_state, r.grad_norms
                lb = r.losses
                sums += (lb.l_st, lb.l_adv, lb.l_div, lb.l_train)
                frac = r.saliency.masked_fraction() if r.saliency is not None else 0.0
                fracs.append(frac)
                if writer is not None:
                    writer.writerow([step, repr(lr), repr(lb.l_st), repr(lb.l_adv), repr(lb.l_div),
                                     repr(lb.l_train), repr(frac)])
                step += 1
            adv = {repr(float(e)): adversarial_accuracy(params, eval_data, float(e)) for e in cfg.report_eps}
            stats = EpochStats(
                epoch + 1,
                *(sums / per_epoch).tolist(),
                accuracy(params, eval_data),
                adv,
                float(np.mean(fracs)),
                float(np.min(fracs)),
                float(np.max(fracs)),
            )
            report.epochs.append(stats)
            log.info("epoch %d: l_train=%.4f acc=%.4f", stats.epoch, stats.l_train, stats.clean_accuracy)
            if on_epoch is not None:
                on_epoch(stats, params)
    finally:
        if fh is not None:
            fh.close()
    report.steps = step
    report.wall_time = time.perf_counter() - t0
    return params, report
