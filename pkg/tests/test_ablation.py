import numpy as np

from uegr.ablation import METHODS, method_config, run_ablation, split, summarize
from uegr.data import SyntheticSpec, generate_synthetic
from uegr.trainer import TrainConfig


def test_method_grid_toggles():
    cfg = TrainConfig()
    base = method_config(cfg, "baseline")
    assert not (base.use_adv or base.use_div or base.use_selective_update or base.use_dropout)
    at = method_config(cfg, "AT")
    assert at.use_adv and at.K == 1 and not at.use_div
    assert method_config(cfg, "R-AT-SU").use_selective_update and not method_config(cfg, "R-AT").use_selective_update
    assert method_config(cfg, "UEGR").dropout_mode == "adaptive"
    assert method_config(TrainConfig(K=1, use_div=False), "R-AT").K == 2
    for m in METHODS:
        method_config(cfg, m).validate()


def test_split_is_disjoint_and_seeded():
    d = generate_synthetic(SyntheticSpec(n_examples=50))
    tr, te = split(d, 0.3, 1)
    assert len(tr) + len(te) == 50 and len(te) == 15
    tr2, _ = split(d, 0.3, 1)
    assert tr == tr2


def test_grid_shape_and_summary():
    d = generate_synthetic(SyntheticSpec(n_examples=60, seed=2))
    rows = run_ablation(d, TrainConfig(epochs=1), [0, 1], [0.1], methods=("baseline", "UEGR"))
    assert [(r["method"], r["seed"]) for r in rows] == [("baseline", 0), ("UEGR", 0), ("baseline", 1), ("UEGR", 1)]
    summ = summarize(rows)
    assert [s["method"] for s in summ] == ["baseline", "UEGR"]
    want = np.mean([r["adv_acc@0.1"] for r in rows if r["method"] == "UEGR"])
    assert summ[1]["adv_acc@0.1"] == want and summ[1]["n_seeds"] == 2
