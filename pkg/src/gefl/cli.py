"""Command-line entry point: ``gefl run | mnd | invert | report``.

Results go to files; diagnostics go to stderr. Exit status is 0 on success,
2 for configuration or usage errors and 3 for failures while running.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import rng as rngs
from .checkpoint import load_generative, load_network
from .config import ExperimentConfig, parse_config, parse_spec
from .datasets import LabeledDataset
from .errors import ConfigError, UsageError
from .metrics import invert_feature, mnd_ratio
from .runner import build_data, run_all, summarize, write_summary

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _cmd_run(args) -> None:
    text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse_config(text)
    if args.set:
        cfg = parse_spec(args.set, cfg)
    if args.seed is not None:
        cfg = parse_spec(f"seeds={args.seed}", cfg)
    run_all(cfg, args.out)


def _read_matrix(path) -> np.ndarray:
    """Rows of floats; a leading non-numeric header row and a ``label`` column are dropped."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and rows[0][0] == "label":
        return LabeledDataset.from_csv(path).inputs
    try:
        float(rows[0][0])
    except (ValueError, IndexError):
        rows = rows[1:]
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return np.array([[float(v) for v in r] for r in rows])


def _write_json(path, payload) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _cmd_mnd(args) -> None:
    files = (args.probe, args.synthetic, args.validation)
    if args.checkpoint:
        if any(files):
            raise UsageError("use either --checkpoint/--data-spec or --probe/--synthetic/--validation")
        gen = load_generative(args.checkpoint)
        cfg = parse_spec(args.data_spec or "", ExperimentConfig())
        train, test = build_data(cfg, args.seed)
        if train.dim != gen.sample_dim:
            raise ConfigError(f"data dim {train.dim} != generator dim {gen.sample_dim}")
        draw = rngs.stream(args.seed, rngs.MND)
        val = test.subset(np.arange(min(cfg.mnd_set_size, len(test))))
        probe = train.subset(draw.permutation(len(train))[:cfg.mnd_probe_size]).inputs
        synthetic, validation = gen.sample(val.labels, draw), val.inputs
    elif all(files):
        probe, synthetic, validation = (_read_matrix(p) for p in files)
    else:
        raise UsageError("mnd needs --checkpoint or all of --probe, --synthetic, --validation")
    _write_json(args.out, mnd_ratio(probe, synthetic, validation).to_dict())


def _cmd_invert(args) -> None:
    fe = load_network(args.fe_checkpoint)
    feats = _read_matrix(args.feature_file)
    res = invert_feature(fe, feats, steps=args.steps, lr=args.lr, tv_weight=args.tv_weight,
                         image_side=args.image_side)
    _write_json(args.out, {"residual": res.residual, "x": res.x.tolist(),
                           "objective_history": res.objective_history,
                           "residual_history": res.residual_history})


def _cmd_report(args) -> None:
    write_summary(summarize(args.dir), args.out or args.dir)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gefl", description="Generative federated learning simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="run this seed only")
    r.add_argument("--out", help="output directory (default: out_dir from the config)")
    r.add_argument("--set", help="semicolon-separated key=value overrides")
    r.set_defaults(fn=_cmd_run)

    m = sub.add_parser("mnd", help="memorization ratio of a generator or of CSV sample sets")
    m.add_argument("--checkpoint")
    m.add_argument("--data-spec", help="semicolon-separated dataset keys, e.g. 'dataset=glyphs;side=8'")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--probe")
    m.add_argument("--synthetic")
    m.add_argument("--validation")
    m.add_argument("--out", required=True, help="JSON output path")
    m.set_defaults(fn=_cmd_mnd)

    i = sub.add_parser("invert", help="recover inputs from features through a saved extractor")
    i.add_argument("--fe-checkpoint", required=True)
    i.add_argument("--feature-file", required=True)
    i.add_argument("--out", required=True, help="JSON output path")
    i.add_argument("--steps", type=int, default=500)
    i.add_argument("--lr", type=float, default=0.05)
    i.add_argument("--tv-weight", type=float, default=0.0)
    i.add_argument("--image-side", type=int)
    i.set_defaults(fn=_cmd_invert)

    s = sub.add_parser("report", help="mean and 95%% interval over per-seed reports")
    s.add_argument("--dir", required=True)
    s.add_argument("--out", help="output directory (default: --dir)")
    s.set_defaults(fn=_cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.fn(args)
    except (ConfigError, UsageError) as exc:
        print(f"gefl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"gefl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
