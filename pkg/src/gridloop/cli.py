"""Command-line front end: scenario runs, step-size certification, reports.

Subcommands: ``run`` executes a scenario and writes trace CSVs plus a summary
and manifest; ``certify`` prints the step-size certificate; ``report`` turns a
trace directory into plot-ready CSV series; ``compare`` runs the feedback-mode
baselines on shared seeds. Exit codes: 0 success, 1 error, 2 step-size
certificate violation. ``GRIDLOOP_THREADS`` caps trial parallelism.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .harness import (
    CertificateError,
    HarnessError,
    ScenarioConfig,
    prepare,
    run_baseline_comparison,
    run_trials,
    tightened_bound_experiment,
    verify_error_bound,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CERTIFICATE = 2


def load_scenario(path: str | Path, overrides: list[str] | None = None) -> ScenarioConfig:
    """Parse a scenario file and apply dotted-path --set overrides.

    A network given as a relative path is resolved against the scenario
    file's directory (builtin aliases like "ieee33" pass through untouched).
    """
    path = Path(path)
    raw = json.loads(path.read_text())
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} must look like key.path=value")
        key, _, value = item.partition("=")
        _set_dotted(raw, key.strip(), _parse_value(value.strip()))
    network = raw.get("network", "")
    candidate = path.parent / str(network)
    if not str(network).startswith("/") and candidate.exists():
        raw["network"] = str(candidate)
    return ScenarioConfig.from_dict(raw)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(raw: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = raw
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_scenario(args.scenario, args.set)
    if args.trials is not None:
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "trials": args.trials})
    if args.seed is not None:
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "base_seed": args.seed})
    if args.mode is not None:
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "feedback_mode": args.mode})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    manifest = {
        "scenario": str(args.scenario),
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "seeds": [cfg.base_seed + t for t in range(cfg.trials)],
        "output_dir": str(out),
        "status": "running",
    }
    manifest_path = out / "manifest.json"
    _write_json(manifest_path, manifest)

    try:
        ctx = prepare(cfg)
    except CertificateError as exc:
        print(f"certificate violation: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE

    traces = run_trials(cfg, context=ctx)
    outputs: dict[str, str] = {}
    for t, trace in enumerate(traces):
        name = "trace.csv" if cfg.trials == 1 else f"trace_{t:03d}.csv"
        trace.to_csv(out / name)
        outputs[name] = ""

    summary = {
        "config": cfg.to_dict(),
        "trials": [tr.summary for tr in traces],
    }
    if ctx.certificate is not None:
        summary["certificate"] = {
            "M": ctx.certificate.M,
            "L": ctx.certificate.L,
            "eps_max": ctx.certificate.eps_max,
            "eps_configured": ctx.certificate.eps_configured,
            "delta": ctx.certificate.delta(),
            "certified": ctx.certificate.certified,
        }
    if ctx.estimator is not None:
        summary["voltage_ci_halfwidth_99"] = (
            2.576 * np.sqrt(ctx.estimator.voltage_variance())
        ).tolist()
    if cfg.verify_bound:
        report = verify_error_bound(cfg, context=ctx)
        summary["bound_report"] = report.to_dict()
    if cfg.tighten_ci is not None:
        tight = tightened_bound_experiment(cfg, cfg.tighten_ci, context=ctx)
        summary["tightening"] = {
            "confidence": tight.confidence,
            "halfwidth": tight.halfwidth,
            "v_min_original": tight.v_min_original,
            "v_min_tightened": tight.v_min_tightened,
            "base_violations": tight.base_violations,
            "tightened_violations": tight.tightened_violations,
            "base_cost": tight.base_cost,
            "tightened_cost": tight.tightened_cost,
        }
    _write_json(out / "summary.json", summary)
    outputs["summary.json"] = ""

    for name in outputs:
        outputs[name] = _sha256(out / name)
    manifest.update(
        status="done",
        outputs=outputs,
        duration_s=time.time() - started,
    )
    _write_json(manifest_path, manifest)
    return EXIT_OK


def cmd_certify(args: argparse.Namespace) -> int:
    cfg = load_scenario(args.scenario, args.set)
    ctx = prepare(cfg, enforce_certificate=False)
    cert = ctx.require_certificate()
    print(f"M        = {cert.M:.6g}")
    print(f"L        = {cert.L:.6g}")
    print(f"eps_max  = {cert.eps_max:.6g}")
    print(f"eps_used = {cert.eps_configured:.6g}")
    print(f"delta    = {cert.delta():.10g}")
    print(f"certified: {cert.certified}")
    return EXIT_OK if cert.certified else EXIT_CERTIFICATE


def _read_trace(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    if not rows:
        raise ValueError(f"trace {path} is empty")
    return header, np.array(rows)


def cmd_report(args: argparse.Namespace) -> int:
    trace_dir = Path(args.trace_dir)
    trace_path = trace_dir / "trace.csv"
    if not trace_path.exists():
        candidates = sorted(trace_dir.glob("trace_*.csv"))
        if not candidates:
            print(f"no trace CSV found in {trace_dir}", file=sys.stderr)
            return EXIT_ERROR
        trace_path = candidates[0]
    try:
        header, data = _read_trace(trace_path)
    except (OSError, ValueError) as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out = Path(args.out) if args.out else trace_dir
    out.mkdir(parents=True, exist_ok=True)
    col = {name: i for i, name in enumerate(header)}
    n = sum(1 for name in header if name.startswith("v_true_"))
    iters = data[:, col["iter"]].astype(int)

    # Final voltage profile scatter.
    with open(out / "voltage_profile.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "v_true_final", "v_hat_final", "v_true_initial"])
        for i in range(1, n + 1):
            writer.writerow(
                [
                    i,
                    repr(float(data[-1, col[f"v_true_{i}"]])),
                    repr(float(data[-1, col[f"v_hat_{i}"]])),
                    repr(float(data[0, col[f"v_true_{i}"]])),
                ]
            )

    # Running-average estimation error series.
    se_mean = data[:, col["se_err_mean"]]
    se_max = data[:, col["se_err_max"]]
    denom = np.arange(1, se_mean.size + 1)
    with open(out / "se_error_series.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "running_avg_mean_err", "running_avg_max_err"])
        run_mean = np.cumsum(se_mean) / denom
        run_max = np.cumsum(se_max) / denom
        for k in range(se_mean.size):
            writer.writerow([iters[k], repr(float(run_mean[k])), repr(float(run_max[k]))])

    # Confidence band series (constant per plan; from the summary when present).
    summary_path = trace_dir / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        halfwidths = summary.get("voltage_ci_halfwidth_99")
        if halfwidths:
            band = float(np.mean(halfwidths))
            with open(out / "ci_band_series.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["iter", "running_avg_mean_err", "ci_halfwidth_mean"])
                run_mean = np.cumsum(se_mean) / denom
                for k in range(se_mean.size):
                    writer.writerow([iters[k], repr(float(run_mean[k])), repr(band)])

    # Cost series.
    with open(out / "cost_series.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "cost_local", "cost_substation", "cost_total"])
        for k in range(se_mean.size):
            cl = float(data[k, col["cost_local"]])
            cs = float(data[k, col["cost_substation"]])
            writer.writerow([iters[k], repr(cl), repr(cs), repr(cl + cs)])
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = load_scenario(args.scenario, args.set)
    try:
        report = run_baseline_comparison(cfg)
    except CertificateError as exc:
        print(f"certificate violation: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for mode in report.modes:
        with open(out / f"comparison_{mode}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "err_mean", "err_max", "running_avg_mean", "running_avg_max"])
            for k in range(report.err_mean[mode].size):
                writer.writerow(
                    [
                        k,
                        repr(float(report.err_mean[mode][k])),
                        repr(float(report.err_max[mode][k])),
                        repr(float(report.running_avg_mean[mode][k])),
                        repr(float(report.running_avg_max[mode][k])),
                    ]
                )
    _write_json(
        out / "comparison_summary.json",
        {
            "modes": list(report.modes),
            "final_violations": report.final_violations,
            "reduction_vs_raw": report.reduction_vs_raw,
            "reduction_vs_pseudo": report.reduction_vs_pseudo,
        },
    )
    print(
        f"se_loop/raw error ratio: {report.reduction_vs_raw:.3f}; "
        f"se_loop/pseudo_only: {report.reduction_vs_pseudo:.3f}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridloop", description=__doc__)
    parser.add_argument("--version", action="version", version=f"gridloop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario")
    run.add_argument("scenario")
    run.add_argument("--out", required=True)
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--mode", choices=["se_loop", "raw_measurements", "full_exact", "pseudo_only", "linear_model"])
    run.set_defaults(func=cmd_run)

    cert = sub.add_parser("certify", help="print the step-size certificate")
    cert.add_argument("scenario")
    cert.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    cert.set_defaults(func=cmd_certify)

    rep = sub.add_parser("report", help="emit plot-ready CSVs from a trace directory")
    rep.add_argument("trace_dir")
    rep.add_argument("--out")
    rep.set_defaults(func=cmd_report)

    cmp_ = sub.add_parser("compare", help="run feedback-mode baselines on shared seeds")
    cmp_.add_argument("scenario")
    cmp_.add_argument("--out", required=True)
    cmp_.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CertificateError as exc:
        print(f"certificate violation: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except (HarnessError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
