"""Flat ``key = value`` run configuration.

Training keys use the :class:`TrainConfig` field names, synthetic-data keys
carry a ``synth_`` prefix, and a few run-level keys control evaluation,
ablation and verification. Unknown keys are rejected.
"""

from dataclasses import dataclass, field, fields, replace

from .data import SyntheticSpec
from .errors import ConfigInvalid
from .trainer import TrainConfig

SYNTH_PREFIX = "synth_"


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    eval_eps: tuple = (0.01, 0.1, 0.4)
    ablate_seeds: int = 5
    ablate_test_fraction: float = 0.3
    verify_trials: int = 200_000
    verify_probes: int = 20

    def validate(self):
        self.train.validate()
        try:
            self.synth.validate()
        except ValueError as exc:
            raise ConfigInvalid(SYNTH_PREFIX + "*", str(exc)) from None
        if any(e < 0 for e in self.eval_eps):
            raise ConfigInvalid("eval_eps", "must be >= 0")
        if self.ablate_seeds < 1:
            raise ConfigInvalid("ablate_seeds", "must be >= 1")
        if not 0 < self.ablate_test_fraction < 1:
            raise ConfigInvalid("ablate_test_fraction", "must lie in (0, 1)")
        if self.verify_trials < 10_000:
            raise ConfigInvalid("verify_trials", "must be >= 10000")
        if self.verify_probes < 1:
            raise ConfigInvalid("verify_probes", "must be >= 1")
        return self

    def with_seed(self, seed):
        return replace(self, train=replace(self.train, seed=seed), synth=replace(self.synth, seed=seed))


_RUN_KEYS = [f.name for f in fields(RunConfig) if f.name not in ("train", "synth")]


def _slots():
    """(key, owner, attribute, default) for every configurable value, in dump order."""
    base = RunConfig()
    out = [(f.name, "train", f.name, getattr(base.train, f.name)) for f in fields(TrainConfig)]
    out += [(SYNTH_PREFIX + f.name, "synth", f.name, getattr(base.synth, f.name)) for f in fields(SyntheticSpec)]
    out += [(k, "run", k, getattr(base, k)) for k in _RUN_KEYS]
    return out


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t for t in (s.strip() for s in text.split(",")) if t]
            conv = type(default[0]) if default else float
            return tuple(conv(t) for t in items)
        return text
    except ValueError:
        raise ConfigInvalid(key, f"cannot parse {text!r}") from None


def parse_config(text):
    slots = {k: (owner, attr, d) for k, owner, attr, d in _slots()}
    cfg = RunConfig()
    train, synth, run = {}, {}, {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(line, f"line {no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in slots:
            raise ConfigInvalid(key, "unknown key")
        owner, attr, default = slots[key]
        target = {"train": train, "synth": synth, "run": run}[owner]
        target[attr] = _parse(key, value, default)
    cfg = RunConfig(replace(cfg.train, **train), replace(cfg.synth, **synth), **run)
    return cfg.validate()


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg):
    lines = []
    for key, owner, attr, _ in _slots():
        obj = {"train": cfg.train, "synth": cfg.synth, "run": cfg}[owner]
        lines.append(f"{key} = {_format(getattr(obj, attr))}")
    return "\n".join(lines) + "\n"
