"""Command-line entry points tying the pipeline together."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    p = _Parser(prog="dynpre", description="Dynamics pretraining pipeline")
    sub = p.add_subparsers(dest="command")

    sp = sub.add_parser("simulate", help="generate a VAR/SVAR dataset container")
    sp.add_argument("--config", help="JSON run config")
    sp.add_argument("--kind", required=True, choices=["pretrain", "downstream"])
    sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("pretrain", help="pretrain the encoder")
    sp.add_argument("--method", required=True, choices=["stdim", "ae"])
    sp.add_argument("--data", required=True, help="dataset container or its directory")
    sp.add_argument("--epochs", type=int, default=15)
    sp.add_argument("--steps", type=int, default=200,
                    help="optimizer steps per epoch")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--log", help="metric log CSV path")

    sp = sub.add_parser("train", help="train the downstream classifier")
    sp.add_argument("--mode", required=True, choices=["fpt", "ufpt", "npt"])
    sp.add_argument("--ckpt", help="pretrained encoder checkpoint")
    sp.add_argument("--data", required=True)
    sp.add_argument("--n-train", type=int, required=True, help="subjects per class")
    sp.add_argument("--gain", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--epochs", type=int, default=500)
    sp.add_argument("--out", required=True, help="results JSONL (appended)")
    sp.add_argument("--probe", action="store_true",
                    help="also report a frozen window-level linear probe AUC")

    sp = sub.add_parser("report", help="summarize a results table")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--out", required=True)

    sub.add_parser("gradcheck", help="finite-difference check of all primitives")

    sp = sub.add_parser("import", help="build a container from per-subject CSVs")
    sp.add_argument("directory")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    return p


def _master_seed(default):
    env = os.environ.get("DYNPRE_SEED")
    return int(env) if env else default


def _resolve_data(path, kind=None):
    from .containers import load_dataset
    p = Path(path)
    if p.is_dir():
        candidates = [p / f"{kind}.tsd"] if kind else sorted(p.glob("*.tsd"))
        for c in candidates:
            if c.exists():
                return load_dataset(c)
        raise FileNotFoundError(f"no dataset container under {p}")
    return load_dataset(p)


def _cmd_simulate(args):
    from .containers import RunConfig, save_dataset
    from .simgen import SimDatasetSpec, build_sim_dataset
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.master_seed = _master_seed(cfg.master_seed)
    print(cfg.dump())
    spec = SimDatasetSpec(
        n_nodes=cfg.n_nodes, n_pretrain_series=cfg.n_pretrain_series,
        pretrain_T=cfg.pretrain_T, n_graphs=cfg.n_graphs,
        series_per_graph=cfg.series_per_graph, downstream_T=cfg.downstream_T,
        noise_std=cfg.noise_std, spectral_target=cfg.spectral_target,
        density=cfg.density, master_seed=cfg.master_seed)
    ds = build_sim_dataset(spec, args.kind)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(out / f"{args.kind}.tsd", ds)
    print(f"wrote {out / (args.kind + '.tsd')}: {ds.data.shape}")


def _cmd_pretrain(args):
    from .containers import save_checkpoint
    from .pretrain import PretrainHyper, pretrain
    ds = _resolve_data(args.data, "pretrain")
    ds.pretrain_split = (0.7, 0.2, 0.1)
    seed = _master_seed(args.seed)
    hyper = PretrainHyper(max_epochs=args.epochs, steps_per_epoch=args.steps)
    print(f"pretrain method={args.method} seed={seed} "
          f"epochs={hyper.max_epochs} lr={hyper.lr} batch={hyper.batch_size}")
    rng = np.random.default_rng(seed)
    lines = ["epoch,loss,metric"]

    def log(row):
        print("epoch {epoch}: loss {loss:.4f} metric {metric:.4f}".format(**row))
        lines.append("{epoch},{loss:.6f},{metric:.6f}".format(**row))

    enc_values, _, _ = pretrain(args.method, ds, hyper, rng, log=log)
    save_checkpoint(args.out, enc_values,
                    {"kind": "encoder", "method": args.method,
                     "in_channels": int(ds.data.shape[1]), "seed": seed})
    if args.log:
        Path(args.log).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out}")


def _cmd_train(args):
    from .containers import load_checkpoint
    from .downstream import (DownstreamHyper, WindowingRule, train_downstream,
                             train_window_probe)
    if args.mode in ("fpt", "ufpt") and not args.ckpt:
        raise UsageError(f"--ckpt is required for mode {args.mode}")
    ds = _resolve_data(args.data, "downstream")
    seed = _master_seed(args.seed)
    enc_values = None
    if args.ckpt:
        enc_values, _ = load_checkpoint(args.ckpt)
    hyper = DownstreamHyper(max_epochs=args.epochs)
    print(f"train mode={args.mode} n_train={args.n_train} gain={args.gain} "
          f"seed={seed} lr={hyper.lr} batch={hyper.batch_size} "
          f"max_epochs={hyper.max_epochs}")
    rng = np.random.default_rng(seed)
    _, result = train_downstream(args.mode, enc_values, ds, args.n_train, hyper,
                                 args.gain, rng, seed=seed)
    row = result.to_dict()
    if args.probe:
        row["probe_auc"] = train_window_probe(
            enc_values if enc_values is not None else {},
            ds, args.n_train, np.random.default_rng(seed)) \
            if enc_values is not None else None
    with open(args.out, "a") as f:
        f.write(json.dumps(row) + "\n")
    print(json.dumps(row))


def _cmd_report(args):
    from .evaluation import summary_csv
    rows = [json.loads(line) for line in Path(args.infile).read_text().splitlines()
            if line.strip()]
    if not rows:
        raise ValueError(f"{args.infile} holds no result rows")
    csv = summary_csv(rows)
    Path(args.out).write_text(csv)
    print(csv, end="")


def _cmd_gradcheck(_args):
    from .gradcheck import gradcheck_all
    ok = gradcheck_all(report=lambda name, err: print(f"{name}: max rel err {err:.2e}"))
    print("gradcheck " + ("PASSED" if ok else "FAILED"))
    if not ok:
        raise RuntimeError("gradient check failed")


def _cmd_import(args):
    from .containers import import_csv, save_dataset
    ds = import_csv(args.directory, args.labels)
    save_dataset(args.out, ds)
    print(f"wrote {args.out}: {ds.data.shape}")


def main(argv=None):
    parser = _build_parser()
    handlers = {
        "simulate": _cmd_simulate, "pretrain": _cmd_pretrain,
        "train": _cmd_train, "report": _cmd_report,
        "gradcheck": _cmd_gradcheck, "import": _cmd_import,
    }
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage()
            return 1
        handlers[args.command](args)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return 0 if exc.code in (0, None) else 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
