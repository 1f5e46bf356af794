"""``uegr`` command-line entry point."""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

from . import _kernels
from .ablation import run_ablation, summarize
from .config import RunConfig, dump_config, load_config
from .data import generate_synthetic, load_tsv, write_tsv
from .errors import ConfigInvalid, IoError, UEGRError, VerificationFailed
from .evaluate import evaluate
from .nn import load_checkpoint, save_checkpoint
from .trainer import train
from .verify import run_all

log = logging.getLogger("uegr")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_IO, EXIT_VERIFY = 0, 1, 2, 3, 4


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _log_resolved(out, cfg, command):
    with open(os.path.join(out, "resolved_config.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"# command = {command}\n# seed = {cfg.train.seed}\n# kernel backend = {_kernels.BACKEND}\n")
        fh.write(dump_config(cfg))


def _resolve(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "eps", None):
        try:
            eps = tuple(float(e) for e in args.eps.split(",") if e.strip())
        except ValueError:
            raise ConfigInvalid("--eps", f"cannot parse {args.eps!r}") from None
        cfg = replace(cfg, eval_eps=eps)
    return cfg.validate()


def _load_data(path, vocab=None, max_len=None):
    if not os.path.exists(path):
        raise IoError(path, "no such file")
    return load_tsv(path, vocab=vocab, max_len=max_len)


def cmd_gen_data(cfg, out_path):
    data = generate_synthetic(cfg.synth)
    write_tsv(data, out_path)
    return {"examples": len(data), "path": out_path}


def cmd_train(cfg, data_path, out_dir):
    out = _out_dir(out_dir)
    data = _load_data(data_path)
    _log_resolved(out, cfg, "train")
    params, report = train(data, cfg.train, step_csv=os.path.join(out, "steps.csv"))
    save_checkpoint(params, os.path.join(out, "checkpoint.json"))
    _write_json(os.path.join(out, "train_report.json"), report.to_dict())
    _write_json(os.path.join(out, "run_meta.json"),
                {"wall_time": report.wall_time, "backend": _kernels.BACKEND, "data": data_path})
    _write_json(os.path.join(out, "vocab.json"), {"itos": data.vocab.itos, "max_len": data.max_len,
                                                   "label_names": data.label_names})
    return {"out": out, "steps": report.steps}


def _vocab_for(checkpoint):
    from .data import Vocab

    path = os.path.join(os.path.dirname(checkpoint), "vocab.json")
    if not os.path.exists(path):
        return None, None
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    v = Vocab()
    v.itos, v.stoi = list(doc["itos"]), {t: i for i, t in enumerate(doc["itos"])}
    return v, doc.get("max_len")


def cmd_eval(cfg, checkpoint, data_path, out_dir, reference=None):
    out = _out_dir(out_dir)
    if not os.path.exists(checkpoint):
        raise IoError(checkpoint, "no such file")
    params = load_checkpoint(checkpoint)
    vocab, max_len = _vocab_for(checkpoint)
    data = _load_data(data_path, vocab=vocab, max_len=max_len)
    ref = load_checkpoint(reference) if reference else None
    _log_resolved(out, cfg, "eval")
    rep = evaluate(params, data, cfg.eval_eps, reference=ref)
    _write_json(os.path.join(out, "eval_report.json"), rep.to_dict())
    rows = [{"epsilon": float(k), "accuracy": rep.adversarial_accuracy[k], "drop": rep.drop[k]}
            for k in rep.adversarial_accuracy]
    _write_csv(os.path.join(out, "eval.csv"), rows, ["epsilon", "accuracy", "drop"])
    return rep.to_dict()


def cmd_verify(cfg, out_dir):
    out = _out_dir(out_dir)
    _log_resolved(out, cfg, "verify")
    res = run_all(cfg.verify_trials, cfg.train.seed, cfg.verify_probes)
    _write_json(os.path.join(out, "verify_report.json"), res)
    if not res["pass"]:
        raise VerificationFailed(res["failed"])
    return {"pass": True, "failed": []}


def cmd_ablate(cfg, data_path, out_dir):
    out = _out_dir(out_dir)
    data = _load_data(data_path)
    _log_resolved(out, cfg, "ablate")
    seeds = [cfg.train.seed + i for i in range(cfg.ablate_seeds)]
    rows = run_ablation(data, cfg.train, seeds, cfg.eval_eps, cfg.ablate_test_fraction)
    cols = list(rows[0])
    _write_csv(os.path.join(out, "ablation.csv"), rows, cols)
    summ = summarize(rows)
    _write_csv(os.path.join(out, "ablation_summary.csv"), summ, list(summ[0]))
    return {"rows": len(rows)}


def build_parser():
    p = argparse.ArgumentParser(prog="uegr", description=__doc__)
    p.add_argument("--dump-defaults", action="store_true", help="print the default config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR", default="runs")

    sp = sub.add_parser("gen-data", help="write a synthetic TSV corpus")
    common(sp)
    sp.add_argument("output", metavar="OUT_TSV")

    sp = sub.add_parser("train", help="train and write checkpoint + report")
    common(sp)
    sp.add_argument("data")

    sp = sub.add_parser("eval", help="clean/adversarial accuracy and CKA")
    common(sp)
    sp.add_argument("checkpoint")
    sp.add_argument("data")
    sp.add_argument("--eps", metavar="LIST", help="comma-separated perturbation radii")
    sp.add_argument("--reference", metavar="CHECKPOINT")

    sp = sub.add_parser("verify", help="Monte-Carlo and Taylor-residual verification suites")
    common(sp)

    sp = sub.add_parser("ablate", help="method x seed toggle grid")
    common(sp)
    sp.add_argument("data")
    sp.add_argument("--eps", metavar="LIST")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.dump_defaults:
            sys.stdout.write(dump_config(RunConfig()))
            return EXIT_OK
        if not args.command:
            parser.print_help()
            return EXIT_CONFIG
        cfg = _resolve(args)
        if args.command == "gen-data":
            result = cmd_gen_data(cfg, args.output)
        elif args.command == "train":
            result = cmd_train(cfg, args.data, args.out)
        elif args.command == "eval":
            result = cmd_eval(cfg, args.checkpoint, args.data, args.out, args.reference)
        elif args.command == "verify":
            result = cmd_verify(cfg, args.out)
        else:
            result = cmd_ablate(cfg, args.data, args.out)
    except ConfigInvalid as exc:
        return _fail(exc, EXIT_CONFIG, key=exc.key)
    except VerificationFailed as exc:
        return _fail(exc, EXIT_VERIFY, failed=exc.failed)
    except IoError as exc:
        return _fail(exc, EXIT_IO, path=exc.path)
    except OSError as exc:
        return _fail(exc, EXIT_IO, path=getattr(exc, "filename", None))
    except UEGRError as exc:
        return _fail(exc, EXIT_ERROR)
    json.dump(result, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


def _fail(exc, code, **extra):
    json.dump({"error": type(exc).__name__, "message": str(exc), **extra}, sys.stderr, sort_keys=True)
    sys.stderr.write("\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
