"""Rebuild run summaries from the files a command left in its output directory."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .autoscale import summarize
from .ensembler import RegretLedger, regret_report
from .errors import DataError


def _rows(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.is_file():
        raise DataError(f"{path}: missing log file")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty log file")
    return rows[0], rows[1:]


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def online_summary(out: Path, manifest: dict) -> dict:
    header, steps = _rows(out / "steps.csv")
    i_comb = header.index("combined_loss")
    comb = np.array([float(r[i_comb]) for r in steps])
    num = sum(float(r[1]) for r in steps)
    den = sum(float(r[2]) for r in steps)
    _, fc = _rows(out / "forecasts.csv")
    names = []
    for r in fc:
        if r[2] not in names:
            names.append(r[2])
    std = np.asarray(manifest["normalization"]["std"], dtype=np.float64)
    std = np.where(std == 0, 1.0, std)
    err = np.array([abs(float(r[3]) - float(r[4])) / std[names.index(r[2])] for r in fc])
    summary = {
        "mse": float(comb.mean()) if comb.size else float("nan"),
        "mae": float(err.mean()) if err.size else float("nan"),
        "wmape": num / den if den > 0 else float("nan"),
        "steps": len(steps),
        "cumulative_loss": float(comb.sum()),
    }
    ledger = RegretLedger.from_csv(out / "regret.csv")
    if len(ledger) >= 2:
        rep = regret_report(ledger)
        summary.update(final_regret=float(rep.curve[-1]), best_expert=rep.best_expert + 1, regret_slope=rep.slope)
    return summary


def online_plot_data(out: Path) -> list[str]:
    plot = out / "plot"
    plot.mkdir(exist_ok=True)
    _, fc = _rows(out / "forecasts.csv")
    _write_csv(plot / "forecast_vs_truth.csv", ["index", "channel", "forecast", "truth"],
               [[int(r[0]) + int(r[1]), r[2], r[3], r[4]] for r in fc])
    header, steps = _rows(out / "steps.csv")
    d = sum(1 for h in header if h.startswith("expert_"))
    wrows = []
    for r in steps:
        parts = r[-1].split(";")
        if len(parts) == d:
            w = parts
        else:  # a selected expert index (1-based)
            w = ["1.0" if i + 1 == int(parts[0]) else "0.0" for i in range(d)]
        wrows.append([r[0], *w])
    _write_csv(plot / "weights.csv", ["anchor", *(f"w_{i + 1}" for i in range(d))], wrows)
    ledger = RegretLedger.from_csv(out / "regret.csv")
    files = ["forecast_vs_truth.csv", "weights.csv"]
    if len(ledger) >= 2:
        rep = regret_report(ledger)
        _write_csv(plot / "regret_curve.csv", ["step", "regret"], [[t + 1, repr(float(v))] for t, v in enumerate(rep.curve)])
        files.append("regret_curve.csv")
    return files


def sim_summary(out: Path, manifest: dict) -> dict:
    _, lat = _rows(out / "latency.csv")
    values = np.array([float(r[0]) for r in lat])
    weights = np.array([float(r[1]) for r in lat])
    header, ticks = _rows(out / "ticks.csv")
    live = int(manifest["live_ticks"])
    ir, ip = header.index("ready_pods"), header.index("pending_pods")
    pods = np.array([float(r[ir]) + float(r[ip]) for r in ticks[:live]])
    rep = summarize(values, weights, pods, manifest["sim"]["base_latency"])
    return json.loads(rep.to_json())


def sim_plot_data(out: Path) -> list[str]:
    plot = out / "plot"
    plot.mkdir(exist_ok=True)
    header, ticks = _rows(out / "ticks.csv")
    keep = [header.index(c) for c in ("tick", "arrival_rate", "ready_pods", "pending_pods", "backlog")]
    _write_csv(plot / "pods.csv", [header[i] for i in keep], [[r[i] for i in keep] for r in ticks])
    _, lat = _rows(out / "latency.csv")
    values = np.array([float(r[0]) for r in lat])
    weights = np.array([float(r[1]) for r in lat])
    cdf = np.cumsum(weights) / weights.sum() if weights.sum() > 0 else np.zeros_like(weights)
    _write_csv(plot / "latency_cdf.csv", ["latency", "cdf"], [[repr(float(v)), repr(float(c))] for v, c in zip(values, cdf)])
    return ["pods.csv", "latency_cdf.csv"]


def pretrain_summary(out: Path) -> dict:
    _, rows = _rows(out / "train_log.csv")
    val = [float(r[2]) for r in rows if r[2]]
    return {"epochs": len(rows), "final_train_loss": float(rows[-1][1]) if rows else float("nan"),
            "best_val_loss": min(val) if val else float("nan")}


def report_directory(out, emit_plot_data: bool = False) -> str:
    """Writes ``report.json`` (and ``plot/*.csv`` on request) and returns a one-line summary."""
    out = Path(out)
    mpath = out / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"{mpath}: missing; not a run directory")
    try:
        manifest = json.loads(mpath.read_text())
        command = manifest["command"]
    except (ValueError, KeyError) as exc:
        raise DataError(f"{mpath}: unreadable manifest ({exc})") from None
    plots: list[str] = []
    if command in ("online-run", "transfer-run"):
        summary = online_summary(out, manifest)
        if emit_plot_data:
            plots = online_plot_data(out)
        line = f"{command} mse={summary['mse']:.6g} mae={summary['mae']:.6g} wmape={summary['wmape']:.6g}"
    elif command == "simulate-hpa":
        summary = sim_summary(out, manifest)
        if emit_plot_data:
            plots = sim_plot_data(out)
        line = f"simulate-hpa policy={manifest.get('policy')} " + " ".join(f"{k}={v:.6g}" for k, v in summary.items())
    elif command == "pretrain":
        summary = pretrain_summary(out)
        line = f"pretrain epochs={summary['epochs']} best_val_loss={summary['best_val_loss']:.6g}"
    elif command == "ingest":
        summary = json.loads((out / "trace_summary.json").read_text())
        line = f"ingest rows={summary['rows']} channels={summary['channels']} interval={summary['interval']}"
    else:
        raise DataError(f"{mpath}: unknown command {command!r}")
    doc = {"command": command, "summary": summary}
    if plots:
        doc["plot_data"] = [f"plot/{p}" for p in plots]
    (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n")
    return line
