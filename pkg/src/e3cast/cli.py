"""Command-line entry point: ``e3cast <command> [flags]``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors. Every
command writes ``manifest.json`` into ``--out`` with the fully resolved
configuration, which ``--config`` accepts back for an exact rerun.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

from .errors import E3castError

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")
COMMANDS = ("ingest", "pretrain", "online-run", "transfer-run", "simulate-hpa", "report")
OFFLINE_FRACTION = 0.8


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"patch sizes must be positive integers, got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="e3cast", description="Online workload forecasting and predictive autoscaling simulation.")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}", parser_class=_Parser)
    sub.required = True
    p.commands = {}

    def engine_flags(sp):
        sp.add_argument("--lookback", type=int, help="history length L (default 1440)")
        sp.add_argument("--horizon", type=int, help="forecast length H (default 60)")
        sp.add_argument("--patch-sizes", type=_int_list, help="comma-separated patch sizes (default 16,32,64,128)")
        sp.add_argument("--ensemble", choices=("os", "ftpl", "none"))
        sp.add_argument("--no-mimo", action="store_true", default=None, help="single resolution (first patch size)")
        sp.add_argument("--no-adapter", action="store_true", default=None, help="disable the online adapter")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--seed", type=int)

    def common(sp):
        p.commands[sp.prog.split()[-1]] = sp
        sp.add_argument("--config", type=Path, help="JSON config or a previous run's manifest.json")
        sp.add_argument("--out", type=Path, required=True, help="output directory")

    sp = sub.add_parser("ingest", help="validate a trace and write its summary")
    sp.add_argument("--trace", type=Path)
    common(sp)

    sp = sub.add_parser("pretrain", help="offline training; writes checkpoint.json")
    sp.add_argument("--trace", type=Path)
    engine_flags(sp)
    common(sp)

    sp = sub.add_parser("online-run", help="pretrain on the head of a trace, then run online over the rest")
    sp.add_argument("--trace", type=Path)
    engine_flags(sp)
    common(sp)

    sp = sub.add_parser("transfer-run", help="pretrain on --source, run online on --target")
    sp.add_argument("--source", type=Path)
    sp.add_argument("--target", type=Path)
    engine_flags(sp)
    common(sp)

    sp = sub.add_parser("simulate-hpa", help="replay a requests/sec trace under a scaling policy")
    sp.add_argument("--trace", type=Path)
    sp.add_argument("--policy", choices=("naive", "ideal", "predictive"))
    engine_flags(sp)
    common(sp)

    sp = sub.add_parser("report", help="regenerate the summary of a run directory from its logs")
    sp.add_argument("--emit-plot-data", action="store_true", help="also write CSV series for plotting")
    common(sp)
    return p


# -- configuration ------------------------------------------------------------


def _read_config(path: Path | None) -> dict:
    """Returns a dict with optional sections engine, sim, run, inputs, policy."""
    if path is None:
        return {}
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise FileNotFoundError(f"--config {path}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise UsageError(f"--config {path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise UsageError(f"--config {path}: expected a JSON object")
    sections = {"engine", "sim", "run", "inputs", "policy"}
    if set(doc) & sections:
        return {k: doc[k] for k in sections if k in doc}
    return {"engine": doc}


FLAG_TO_FIELD = {
    "lookback": "lookback",
    "horizon": "horizon",
    "patch_sizes": "patch_sizes",
    "ensemble": "ensemble",
    "no_mimo": "disable_mimo",
    "no_adapter": "disable_adapter",
    "epochs": "epochs",
    "seed": "seed",
}


def _engine_config(args, conf: dict):
    from .engine import EngineConfig

    d = EngineConfig().to_dict()
    d.update(conf.get("engine", {}))
    for flag, name in FLAG_TO_FIELD.items():
        v = getattr(args, flag, None)
        if v is not None:
            d[name] = v
    try:
        return EngineConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid engine configuration: {exc}") from None


def _sim_config(conf: dict):
    from .autoscale import SimConfig

    try:
        return SimConfig.from_dict(conf.get("sim", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid sim configuration: {exc}") from None


def _run_settings(conf: dict) -> dict:
    run = {"offline_fraction": OFFLINE_FRACTION}
    run.update(conf.get("run", {}))
    unknown = set(run) - {"offline_fraction"}
    if unknown:
        raise UsageError(f"unknown run config keys: {sorted(unknown)}")
    if not 0 <= run["offline_fraction"] < 1:
        raise UsageError("run.offline_fraction must be in [0, 1)")
    return run


def _input(args, conf: dict, name: str) -> Path:
    v = getattr(args, name, None)
    if v is None and name in conf.get("inputs", {}):
        v = Path(conf["inputs"][name]["path"])
    if v is None:
        raise UsageError(f"the following arguments are required: --{name}")
    return v


def _describe(path: Path) -> dict:
    return {"path": str(path), "sha256": hashlib.sha256(path.read_bytes()).hexdigest()}


def _load(path: Path, flag: str):
    from .series import load_trace

    if not path.is_file():
        raise FileNotFoundError(f"--{flag} {path}: no such file")
    return load_trace(path)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _manifest(out: Path, command: str, argv, **sections) -> None:
    from . import __version__

    doc = {"command": command, "argv": list(argv), "package_version": __version__}
    doc.update(sections)
    _write_json(out / "manifest.json", doc)


def _metric_line(m) -> str:
    return f"mse={m.mse:.6g} mae={m.mae:.6g} wmape={m.wmape:.6g}"


# -- commands -----------------------------------------------------------------


def cmd_ingest(args, conf, argv) -> str:
    from .series import standard_stats

    path = _input(args, conf, "trace")
    tr = _load(path, "trace")
    mean, std = standard_stats(tr)
    summary = {
        "rows": tr.n_rows,
        "channels": tr.n_channels,
        "interval": tr.interval,
        "channel_names": list(tr.channel_names),
        "start": int(tr.timestamps[0]),
        "mean": mean.tolist(),
        "std": std.tolist(),
    }
    _write_json(args.out / "trace_summary.json", summary)
    _manifest(args.out, "ingest", argv, inputs={"trace": _describe(path)})
    return f"rows={tr.n_rows} channels={tr.n_channels} interval={tr.interval}"


def cmd_pretrain(args, conf, argv) -> str:
    from .engine import pretrain, save_checkpoint

    cfg = _engine_config(args, conf)
    path = _input(args, conf, "trace")
    tr = _load(path, "trace")
    state = pretrain(tr, cfg)
    save_checkpoint(state, args.out / "checkpoint.json")
    with (args.out / "train_log.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, tl in enumerate(state.train_loss):
            w.writerow([i + 1, repr(tl), repr(state.val_loss[i]) if i < len(state.val_loss) else ""])
    _manifest(args.out, "pretrain", argv, engine=cfg.to_dict(), inputs={"trace": _describe(path)})
    last_t = state.train_loss[-1] if state.train_loss else float("nan")
    last_v = min(state.val_loss) if state.val_loss else float("nan")
    return f"epochs={len(state.train_loss)} train_loss={last_t:.6g} best_val_loss={last_v:.6g}"


def _write_online(out: Path, state, result, channel_names) -> None:
    from .engine import save_checkpoint

    (out / "metrics.json").write_text(result.metrics.to_json() + "\n")
    result.ledger.to_csv(out / "regret.csv")
    result.write_step_log(out / "steps.csv")
    result.write_forecasts(out / "forecasts.csv", channel_names)
    save_checkpoint(state, out / "checkpoint.json")


def _norm_section(state) -> dict:
    return {"mean": state.norm_mean.tolist(), "std": state.norm_std.tolist()}


def cmd_online_run(args, conf, argv) -> str:
    from .engine import online_run, pretrain

    cfg = _engine_config(args, conf)
    run = _run_settings(conf)
    path = _input(args, conf, "trace")
    tr = _load(path, "trace")
    split = int(round(tr.n_rows * run["offline_fraction"]))
    start = max(split, cfg.lookback)
    state = pretrain(tr.slice(0, split), cfg) if split >= cfg.lookback + cfg.horizon else _untrained(cfg, tr, split)
    result = online_run(state, tr, start=start)
    _write_online(args.out, state, result, tr.channel_names)
    _manifest(args.out, "online-run", argv, engine=cfg.to_dict(), run=run, inputs={"trace": _describe(path)},
              normalization=_norm_section(state), first_anchor=start, metrics=json.loads(result.metrics.to_json()))
    return _metric_line(result.metrics)


def _untrained(cfg, tr, split):
    """Cold start: no offline pass. Normalization still comes from whatever head rows exist."""
    from .engine import init_state
    from .series import standard_stats

    state = init_state(cfg, tr.n_channels)
    if split >= 2:
        state.norm_mean, state.norm_std = standard_stats(tr, 0, split)
    return state


def cmd_transfer_run(args, conf, argv) -> str:
    from .engine import transfer_run

    cfg = _engine_config(args, conf)
    sp, tp = _input(args, conf, "source"), _input(args, conf, "target")
    src, tgt = _load(sp, "source"), _load(tp, "target")
    if src.n_channels != tgt.n_channels:
        raise UsageError(f"--source has {src.n_channels} channels but --target has {tgt.n_channels}")
    state, result = transfer_run(src, tgt, cfg)
    _write_online(args.out, state, result, tgt.channel_names)
    _manifest(args.out, "transfer-run", argv, engine=cfg.to_dict(), inputs={"source": _describe(sp), "target": _describe(tp)},
              normalization=_norm_section(state), metrics=json.loads(result.metrics.to_json()))
    return _metric_line(result.metrics)


def cmd_simulate_hpa(args, conf, argv) -> str:
    from .autoscale import simulate
    from .engine import EngineForecaster, pretrain

    policy = args.policy or conf.get("policy")
    if policy is None:
        raise UsageError("the following arguments are required: --policy")
    cfg = _engine_config(args, conf)
    sim = _sim_config(conf)
    run = _run_settings(conf)
    path = _input(args, conf, "trace")
    tr = _load(path, "trace")
    if tr.n_channels != 1:
        raise UsageError(f"--trace {path}: simulate-hpa needs a single requests/sec channel, got {tr.n_channels}")
    split = int(round(tr.n_rows * run["offline_fraction"]))
    workload = tr.slice(split, tr.n_rows)
    forecaster = None
    if policy == "predictive":
        if split < cfg.lookback + cfg.horizon:
            raise UsageError(f"predictive policy needs at least {cfg.lookback + cfg.horizon} offline rows, "
                             f"run.offline_fraction gives {split}")
        state = pretrain(tr.slice(0, split), cfg)
        forecaster = EngineForecaster(state, tr.values, sim.feedback_interval, offset=split)
    res = simulate(policy, workload, sim, forecaster)
    (args.out / "sim_report.json").write_text(res.report.to_json() + "\n")
    res.write_log(args.out / "ticks.csv")
    with (args.out / "latency.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["latency", "requests"])
        for v, q in zip(res.latency_values, res.latency_weights):
            w.writerow([repr(float(v)), repr(float(q))])
    n_ticks = int(round(workload.n_rows * workload.interval / sim.tick))
    _manifest(args.out, "simulate-hpa", argv, policy=policy, engine=cfg.to_dict(), sim=sim.to_dict(), run=run,
              inputs={"trace": _describe(path)}, first_row=split, live_ticks=n_ticks,
              report=json.loads(res.report.to_json()))
    r = res.report
    return (f"policy={policy} ave_lat={r.ave_lat:.6g} max_lat={r.max_lat:.6g} p99_lat={r.p99_lat:.6g} "
            f"ave_pod={r.ave_pod:.6g} max_pod={r.max_pod}")


def cmd_report(args, conf, argv) -> str:
    from .reporting import report_directory

    return report_directory(args.out, emit_plot_data=args.emit_plot_data)


HANDLERS = {
    "ingest": cmd_ingest,
    "pretrain": cmd_pretrain,
    "online-run": cmd_online_run,
    "transfer-run": cmd_transfer_run,
    "simulate-hpa": cmd_simulate_hpa,
    "report": cmd_report,
}


def _limit_threads() -> None:
    raw = os.environ.get("E3CAST_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"E3CAST_THREADS must be a positive integer, got {raw!r}") from None
    # effective only before numpy first loads its BLAS; the package defers numpy imports until here
    for var in THREAD_VARS:
        os.environ[var] = str(n)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _limit_threads()
        conf = _read_config(args.config)
        if args.command == "report":
            if not args.out.is_dir():
                raise FileNotFoundError(f"--out {args.out}: no such run directory")
        else:
            args.out.mkdir(parents=True, exist_ok=True)
        line = HANDLERS[args.command](args, conf, argv)
    except UsageError as exc:
        parser.commands[args.command].print_usage(sys.stderr)
        print(f"e3cast: error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, E3castError) as exc:
        print(f"e3cast: data error: {exc}", file=sys.stderr)
        return 2
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
