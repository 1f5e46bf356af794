"""Toggle grid over the forward- and backward-stage mechanisms."""

from dataclasses import replace

import numpy as np

from .evaluate import accuracy, adversarial_accuracy, layer_cka
from .nn import init_params
from .trainer import train

METHODS = {
    "baseline": dict(use_adv=False, use_div=False, use_selective_update=False, use_dropout=False),
    "dropout": dict(use_adv=False, use_div=False, use_selective_update=False, use_dropout=True,
                    clean_pass_dropout=True),
    "AT": dict(use_adv=True, use_div=False, use_selective_update=False, use_dropout=False, K=1),
    "R-AT": dict(use_adv=True, use_div=True, use_selective_update=False, use_dropout=True, dropout_mode="fixed"),
    "R-AT-SU": dict(use_adv=True, use_div=True, use_selective_update=True, use_dropout=True, dropout_mode="fixed"),
    "UEGR": dict(use_adv=True, use_div=True, use_selective_update=True, use_dropout=True, dropout_mode="adaptive"),
}


def method_config(cfg, method):
    kw = dict(METHODS[method])
    if kw.get("use_div") and cfg.K < 2:
        kw["K"] = 2
    return replace(cfg, **kw)


def split(dataset, test_fraction, seed):
    perm = np.random.default_rng(seed).permutation(len(dataset))
    n_test = max(1, int(round(test_fraction * len(dataset))))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def run_cell(train_data, test_data, cfg, method, seed, eps_list):
    mcfg = replace(method_config(cfg, method), seed=seed, report_eps=())
    init = init_params(len(train_data.vocab), train_data.n_classes, mcfg.emb_dim, mcfg.hidden,
                       seed=seed, emb_scale=mcfg.emb_init_scale)
    params, report = train(train_data, mcfg, params=init.copy())
    row = {"method": method, "seed": seed, "clean_accuracy": accuracy(params, test_data)}
    for e in eps_list:
        row[f"adv_acc@{e!r}"] = adversarial_accuracy(params, test_data, float(e))
    cka = layer_cka(params, init, test_data)
    row["cka_vs_init"] = float(np.nanmean(list(cka.values())))
    row["final_l_train"] = report.epochs[-1].l_train if report.epochs else float("nan")
    return row


def run_ablation(dataset, cfg, seeds, eps_list, test_fraction=0.3, methods=tuple(METHODS)):
    """One row per (method, seed); each seed also fixes the train/test split."""
    rows = []
    for seed in seeds:
        tr, te = split(dataset, test_fraction, seed)
        for m in methods:
            rows.append(run_cell(tr, te, cfg, m, seed, eps_list))
    return rows


def summarize(rows):
    out = []
    for m in dict.fromkeys(r["method"] for r in rows):
        sel = [r for r in rows if r["method"] == m]
        keys = [k for k in sel[0] if k not in ("method", "seed")]
        out.append({"method": m, "n_seeds": len(sel), **{k: float(np.mean([r[k] for r in sel])) for k in keys}})
    return out
