"""Experiment orchestration: data, dispatch by method, report and trace files."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import rng as rngs
from .checkpoint import save_generative, save_network
from .config import ExperimentConfig, config_dict
from .datasets import LabeledDataset, PartitionPlan, make_blobs, make_glyphs, partition_iid, split_train_val
from .federation import BASELINES, RunResult, TraceRecord, run_baseline, run_gefl, run_geflf
from .metrics import MndReport, comm_ledger, invert_feature, mnd_ratio, probe_embedding

SCHEMA_VERSION = 1
TRACE_HEADER = ("round", "stage", "arch", "accuracy", "loss", "comm_up_floats", "comm_down_floats")


@dataclass
class RunReport:
    config: dict
    seed: int
    trace: list[TraceRecord]
    per_arch: dict[int, float]
    mean: float
    comm: dict
    comm_counted: dict
    mnd: MndReport | None
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "config": self.config,
            "per_arch": {str(m): a for m, a in sorted(self.per_arch.items())},
            "mean": self.mean,
            "comm": self.comm,
            "comm_counted": self.comm_counted,
            "mnd": self.mnd.to_dict() if self.mnd is not None else None,
            "trace": [_trace_row(t) for t in self.trace],
            "wall_time_s": self.wall_time_s,
        }


def _trace_row(t: TraceRecord) -> dict:
    return {"round": t.round, "stage": t.stage, "arch": t.arch, "accuracy": t.accuracy,
            "loss": t.loss, "comm_up_floats": t.comm_up, "comm_down_floats": t.comm_down}


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def trace_csv(trace: list[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for t in trace:
        w.writerow([_cell(v) for v in _trace_row(t).values()])
    return buf.getvalue()


def build_data(cfg: ExperimentConfig, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Full dataset split into (train, test); the test split is global and shared by all clients."""
    if cfg.dataset == "blobs":
        ds = make_blobs(cfg.num_classes, cfg.dim, cfg.n_per_class, cfg.noise, seed)
    else:
        ds = make_glyphs(cfg.num_classes, cfg.side, cfg.n_per_class, cfg.noise, cfg.shift_max, seed)
    return split_train_val(ds, cfg.test_ratio, seed)


def _dispatch(method: str, shards, test, fed) -> RunResult:
    if method == "gefl":
        return run_gefl(shards, test, fed)
    if method == "geflf":
        return run_geflf(shards, test, fed)
    assert method in BASELINES
    return run_baseline(method, shards, test, fed)


def _ledger(method: str, result: RunResult, fed) -> dict:
    server, clients = result.server, result.clients
    archs = [c.arch for c in clients]
    used = sorted(set(archs))
    shared_layer = 0
    if method == "lg_partial":
        (w, b) = server.targets[used[0]].params[0]
        shared_layer = w.size + b.size
    led = comm_ledger(
        method, archs, fed.t_ka, fed.t_tn, fed.t_fe,
        target_sizes={m: server.targets[m].param_count for m in used},
        gen_size=server.gen.param_count if server.gen is not None else 0,
        fe_size=server.fe.param_count if server.fe is not None else 0,
        header_sizes={m: server.headers[m].param_count for m in used} if server.headers else None,
        shared_layer_size=shared_layer)
    up, down = led.totals(archs)
    return {**led.to_dict(), "total_up": up, "total_down": down}


def run_mnd(cfg: ExperimentConfig, result: RunResult, train_pool: LabeledDataset,
            test: LabeledDataset, seed: int) -> MndReport | None:
    """Memorization ratio of the trained generator against the clients' training data.

    For the feature-space variant the generated features are first mapped
    back to input space by inverting the frozen extractor.
    """
    server = result.server
    gen = server.gen
    if gen is None:
        return None
    draw = rngs.stream(seed, rngs.MND)
    n_set = min(cfg.mnd_set_size, len(test))
    val = test.subset(np.arange(n_set))
    probe = train_pool.subset(draw.permutation(len(train_pool))[:min(cfg.mnd_probe_size, len(train_pool))])
    synthetic = gen.sample(val.labels, draw)
    if server.fe is not None and server.fe.param_count:
        side = train_pool.image_side
        synthetic = invert_feature(server.fe, synthetic, tv_weight=1e-3 if side else 0.0,
                                   image_side=side).x
    embed = None
    if cfg.mnd_distance == "probe_feature":
        head = server.targets[0] if server.fe is None else server.fe.concat(server.headers[0])
        embed = probe_embedding(head, 1)
    return mnd_ratio(probe.inputs, synthetic, val.inputs, cfg.mnd_distance, embed)


def run_experiment(cfg: ExperimentConfig, seed: int) -> tuple[RunReport, RunResult]:
    start = time.perf_counter()
    fed = cfg.federation(seed)
    train, test = build_data(cfg, seed)
    shards = partition_iid(train, PartitionPlan(cfg.clients, cfg.fraction, seed))
    result = _dispatch(cfg.method, shards, test, fed)
    pool = LabeledDataset(np.concatenate([s.inputs for s in shards]),
                          np.concatenate([s.labels for s in shards]), train.num_classes,
                          train.value_range, train.image_side)
    mnd = run_mnd(cfg, result, pool, test, seed) if cfg.mnd else None
    report = RunReport(config_dict(cfg), seed, result.trace, result.per_arch, result.mean_accuracy,
                       _ledger(cfg.method, result, fed),
                       {"total_up": result.comm_up, "total_down": result.comm_down},
                       mnd, time.perf_counter() - start)
    return report, result


def write_outputs(report: RunReport, result: RunResult, out_dir: str | Path,
                  checkpoints: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = report.seed
    paths = {"report": out / f"report_seed{s}.json", "trace": out / f"trace_seed{s}.csv"}
    paths["report"].write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    paths["trace"].write_text(trace_csv(report.trace))
    if checkpoints and result.server is not None:
        if result.server.gen is not None:
            paths["gen"] = out / f"gen_seed{s}.ckpt"
            save_generative(paths["gen"], result.server.gen)
        if result.server.fe is not None:
            paths["fe"] = out / f"fe_seed{s}.ckpt"
            save_network(paths["fe"], result.server.fe)
    return paths


def run_all(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> list[RunReport]:
    reports = []
    for seed in cfg.seeds:
        report, result = run_experiment(cfg, seed)
        write_outputs(report, result, out_dir if out_dir is not None else cfg.out_dir,
                      cfg.save_checkpoints)
        reports.append(report)
    return reports


def _ci95(values: list[float]) -> tuple[float, float | None]:
    """Mean and Student-t 95% half-width (None for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, None
    sem = float(arr.std(ddof=1)) / np.sqrt(arr.size)
    return mean, float(stats.t.ppf(0.975, arr.size - 1) * sem)


def summarize(report_dir: str | Path) -> dict:
    """Mean and 95% interval of final accuracies over every ``report_seed*.json`` in a directory."""
    files = sorted(Path(report_dir).glob("report_seed*.json"))
    if not files:
        raise FileNotFoundError(f"no report_seed*.json files in {report_dir}")
    reports = [json.loads(p.read_text()) for p in files]
    versions = {r.get("schema_version") for r in reports}
    if versions != {SCHEMA_VERSION}:
        raise ValueError(f"unsupported report schema versions {sorted(map(str, versions))}")
    keys = sorted({k for r in reports for k in r["per_arch"]}, key=int)
    rows = []
    for name, vals in [(f"arch{k}", [r["per_arch"][k] for r in reports if k in r["per_arch"]])
                       for k in keys] + [("mean", [r["mean"] for r in reports])]:
        m, hw = _ci95(vals)
        rows.append({"metric": name, "n": len(vals), "mean": m, "ci95": hw})
    return {"schema_version": SCHEMA_VERSION, "seeds": [r["seed"] for r in reports], "rows": rows}


def write_summary(summary: dict, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    js, cs = out / "summary.json", out / "summary.csv"
    js.write_text(json.dumps(summary, indent=2) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "n", "mean", "ci95"])
    for r in summary["rows"]:
        w.writerow([r["metric"], r["n"], _cell(r["mean"]), _cell(r["ci95"])])
    cs.write_text(buf.getvalue())
    return js, cs
