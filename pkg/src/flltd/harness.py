"""Experiment runner: traces, summaries and the three-arm comparison."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentConfig, dumps
from .federation import ExperimentResult, run_experiment

TRACE_COLUMNS = (
    "round",
    "client_id",
    "true_loss",
    "reported_loss",
    "delta",
    "flagged",
    "memory",
    "alpha",
    "update_norm",
    "global_test_acc",
)


@dataclass(frozen=True)
class RunArtifacts:
    trace_csv: Path
    summary_json: Path
    config_echo: Path


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def atomic_write(path, text: str):
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_trace(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in sorted(reports, key=lambda r: r.round):
        for c in sorted(r.clients, key=lambda c: c.client_id):
            w.writerow(
                [
                    r.round,
                    c.client_id,
                    _fmt(c.true_loss),
                    _fmt(c.reported_loss),
                    "" if c.delta is None else _fmt(c.delta),
                    "true" if c.flagged else "false",
                    c.memory,
                    _fmt(c.alpha),
                    _fmt(c.update_norm),
                    _fmt(r.test_accuracy),
                ]
            )
    return buf.getvalue()


def emit_trace(reports, path):
    atomic_write(path, format_trace(reports))


def summarize(cfg: ExperimentConfig, result: ExperimentResult) -> dict:
    counts = {i: 0 for i in range(cfg.num_clients)}
    for r in result.reports:
        for c in r.clients:
            counts[c.client_id] += int(c.flagged)
    coupled = [e.client_id for e in cfg.attacks if e.spec.update_magnitude is not None]
    out = {
        "final_accuracy": result.final_accuracy,
        "initial_accuracy": result.initial_accuracy,
        "rounds": len(result.reports),
        "rule": cfg.rule,
        "flags_total": sum(counts.values()),
        "per_client_flag_counts": {str(k): v for k, v in counts.items()},
    }
    if coupled:
        out["note"] = (
            "clients %s couple reported-loss manipulation with update scaling; "
            "this attacker model is a reconstruction, not a documented protocol"
            % coupled
        )
    return out


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_run(cfg: ExperimentConfig, result: ExperimentResult, out_dir) -> RunArtifacts:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    art = RunArtifacts(out / "trace.csv", out / "summary.json", out / "config.resolved.yaml")
    emit_trace(result.reports, art.trace_csv)
    atomic_write(art.summary_json, _dump_json(summarize(cfg, result)))
    atomic_write(art.config_echo, dumps(cfg))
    return art


def run(cfg: ExperimentConfig, out_dir, *, workers: int = 1) -> RunArtifacts:
    return write_run(cfg, run_experiment(cfg, workers=workers), out_dir)


COMPARISON_ARMS = ("clean", "fedavg_attacked", "ltd_attacked")


def comparison_configs(cfg: ExperimentConfig) -> dict:
    """The three arms share the seed, so data, split and init are identical."""
    return {
        "clean": cfg.replace(rule="fedavg", attacks=()),
        "fedavg_attacked": cfg.replace(rule="fedavg"),
        "ltd_attacked": cfg.replace(rule="fl_ltd"),
    }


def compare(cfg: ExperimentConfig, out_dir, *, workers: int = 1) -> dict:
    arms = comparison_configs(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def go(name):
        return run_experiment(arms[name], workers=1)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(arms))) as pool:
            results = dict(zip(COMPARISON_ARMS, pool.map(go, COMPARISON_ARMS)))
    else:
        results = {name: go(name) for name in COMPARISON_ARMS}

    for name in COMPARISON_ARMS:
        write_run(arms[name], results[name], out / name)
    acc = {name: results[name].final_accuracy for name in COMPARISON_ARMS}
    summary = {
        "acc_clean": acc["clean"],
        "acc_fedavg_attacked": acc["fedavg_attacked"],
        "acc_ltd_attacked": acc["ltd_attacked"],
        "deltas": {
            "ltd_minus_fedavg_attacked": acc["ltd_attacked"] - acc["fedavg_attacked"],
            "clean_minus_ltd_attacked": acc["clean"] - acc["ltd_attacked"],
            "clean_minus_fedavg_attacked": acc["clean"] - acc["fedavg_attacked"],
        },
    }
    atomic_write(out / "comparison.json", _dump_json(summary))
    return summary
