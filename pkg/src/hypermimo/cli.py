"""Command line entry point: ``hypermimo <subcommand> --config cfg.json --out DIR``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .adaptation import load_datasets, load_hypernet, load_joint, save_datasets, save_hypernet, save_joint
from .channel import ConfigError, TraceFormatError
from .harness import (
    METHODS,
    ExperimentConfig,
    emit_results,
    load_config,
    make_estimator,
    offline_datasets,
    ratio_report,
    run_experiment,
)

log = logging.getLogger("hypermimo")

DATA_FILE = "datasets.npz"
JOINT_FILE = "joint.npz"
HYPER_FILE = "hyper.npz"


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "method", None):
        overrides["method"] = args.method
    if getattr(args, "trace", None):
        overrides.update(channel="trace", trace_path=args.trace)
    if overrides:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def _datasets(args, cfg):
    path = Path(args.data) if args.data else Path(args.out) / DATA_FILE
    if path.exists():
        return load_datasets(path)
    log.info("no dataset at %s, generating", path)
    return offline_datasets(cfg)


def _fitted(cfg: ExperimentConfig, method: str, ckpt_dir: Path):
    est = make_estimator(cfg, method)
    if method == "online":
        return est.fit()
    if method == "joint":
        path = ckpt_dir / JOINT_FILE
        if not path.exists():
            raise FileNotFoundError(f"joint checkpoint {path} not found (needs K=2..{cfg.k_max}); run train-joint")
        return est.set_receivers(load_joint(path))
    path = ckpt_dir / HYPER_FILE
    if not path.exists():
        raise FileNotFoundError(f"hypernetwork checkpoint {path} not found; run train-hyper")
    return est.set_hypernet(load_hypernet(path))


def cmd_gen_data(args) -> None:
    cfg = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_datasets(out / DATA_FILE, offline_datasets(cfg))
    print(f"wrote {out / DATA_FILE}")


def cmd_train_joint(args) -> None:
    cfg = _resolve(args)
    est = make_estimator(cfg, "joint").fit(_datasets(args, cfg))
    Path(args.out).mkdir(parents=True, exist_ok=True)
    save_joint(Path(args.out) / JOINT_FILE, est.receivers_, cfg.k_max)
    print(f"wrote {Path(args.out) / JOINT_FILE} ({est.n_checkpoints} receivers)")


def cmd_train_hyper(args) -> None:
    cfg = _resolve(args)
    est = make_estimator(cfg, "hyper").fit(_datasets(args, cfg))
    Path(args.out).mkdir(parents=True, exist_ok=True)
    save_hypernet(Path(args.out) / HYPER_FILE, est.hypernet_)
    print(f"wrote {Path(args.out) / HYPER_FILE} (final loss {est.loss_curve_[-1]:.4f})")


def cmd_simulate(args) -> None:
    cfg = _resolve(args)
    ckpt = Path(args.checkpoints or args.out)
    est = _fitted(cfg, cfg.method, ckpt)
    results, summary, _ = run_experiment(cfg, est)
    emit_results(results, summary, cfg, args.out)
    print(f"{cfg.method}: aggregate SER {summary['aggregate_ser']:.5f} over {len(results)} blocks")


def cmd_compare(args) -> None:
    cfg = _resolve(args)
    ckpt = Path(args.checkpoints or args.out)
    report, ledgers = {}, {}
    for method in METHODS:
        mcfg = replace(cfg, method=method)
        results, summary, ledger = run_experiment(mcfg, _fitted(mcfg, method, ckpt))
        emit_results(results, summary, mcfg, Path(args.out) / method)
        report[method] = {k: summary[k] for k in ("aggregate_ser", "mean_block_ser", "mean_wall_ms")}
        ledgers[method] = ledger
        print(f"{method:>6}: aggregate SER {summary['aggregate_ser']:.5f}")
    Ks = cfg.user_values()
    report["complexity_ratio"] = ratio_report(cfg, ledgers["hyper"], ledgers["online"], max(Ks))
    Path(args.out, "compare.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"hyper/online cost ratio {report['complexity_ratio']['measured']:.4f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypermimo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, method=False):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--trace", help="replay channels from a trace file")
        if method:
            sp.add_argument("--method", choices=METHODS)
        return sp

    common(sub.add_parser("gen-data", help="generate offline training datasets")).set_defaults(func=cmd_gen_data)
    for name, fn in (("train-joint", cmd_train_joint), ("train-hyper", cmd_train_hyper)):
        sp = common(sub.add_parser(name, help=f"offline training ({name[6:]})"))
        sp.add_argument("--data", help=f"dataset file (default OUT/{DATA_FILE})")
        sp.set_defaults(func=fn)
    sp = common(sub.add_parser("simulate", help="run one method over T blocks"), method=True)
    sp.add_argument("--checkpoints", help="directory with joint/hyper checkpoints (default OUT)")
    sp.set_defaults(func=cmd_simulate)
    sp = common(sub.add_parser("compare", help="run all methods on the same block stream"))
    sp.add_argument("--checkpoints", help="directory with joint/hyper checkpoints (default OUT)")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, TraceFormatError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - every other failure is a runtime error
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
