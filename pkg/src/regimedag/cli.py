"""Command-line entry point: generate, fit, evaluate, and chain them.

One JSON configuration document (sections "data", "model", "output") can
drive every subcommand; command-line flags override config fields. Exit
codes: 0 success, 2 data or configuration error, 3 fit failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .em import EmConfig, FitError, RunResult, run
from .metrics import EvalReport, evaluate
from .series import TimeSeries
from .synthetic import (
    load_manifest,
    manifest_graphs,
    manifest_labels,
    random_system,
    save_manifest,
    simulate,
)

EXIT_OK = 0
EXIT_DATA = 2
EXIT_FIT = 3


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config document must be a JSON object")
    return doc


def _section(config: dict, name: str) -> dict:
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise ValueError(f"config section {name!r} must be an object")
    return dict(section)


def _pick(args_value, section: dict, key: str, default):
    """Flag wins over config field wins over default."""
    if args_value is not None:
        return args_value
    if key in section and section[key] is not None:
        return section[key]
    return default


def _out_dir(args, config: dict) -> Path:
    out = _pick(args.out, _section(config, "output"), "dir", ".")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _model_config(args, config: dict, seed: int | None = None) -> EmConfig:
    model = _section(config, "model")
    return EmConfig(
        mechanism=_pick(getattr(args, "mechanism", None), model,
                        "mechanism", "linear"),
        window=int(_pick(getattr(args, "window", None), model, "window", 300)),
        min_regime=_pick(getattr(args, "zeta", None), model, "zeta", None),
        sparsity=float(_pick(getattr(args, "sparsity", None), model,
                             "lambda", 0.05)),
        threshold=float(_pick(getattr(args, "threshold", None), model,
                              "threshold", 0.4)),
        n_iter_max=int(_pick(getattr(args, "iters", None), model,
                             "n_iter_max", 20)),
        seed=int(seed if seed is not None
                 else _pick(args.seed, model, "seed", 0)),
    )


def _max_lag(args, config: dict) -> int:
    model = _section(config, "model")
    return int(_pick(getattr(args, "lag", None), model, "lag", 1))


def _gen_spec(args, config: dict, seed: int | None = None):
    data = _section(config, "data")
    lengths = data.get("lengths")
    return random_system(
        n_vars=int(_pick(getattr(args, "n_vars", None), data, "n_vars", 10)),
        max_lag=_max_lag(args, config),
        n_regimes=int(_pick(getattr(args, "n_regimes", None), data,
                            "n_regimes", 2)),
        mechanism=_pick(getattr(args, "mechanism", None),
                        _section(config, "model"), "mechanism", "linear"),
        seed=int(seed if seed is not None
                 else _pick(args.seed, data, "seed", 0)),
        mean_degree=float(_pick(getattr(args, "mean_degree", None), data,
                                "mean_degree", 1.0)),
        noise_scale=float(_pick(getattr(args, "noise_scale", None), data,
                                "noise_scale", 1.0)),
        lengths=tuple(lengths) if lengths else None,
    )


def cmd_gen(args, config: dict, out: Path | None = None,
            seed: int | None = None) -> int:
    spec = _gen_spec(args, config, seed=seed)
    out = out if out is not None else _out_dir(args, config)
    series, _, manifest = simulate(spec)
    series.to_csv(out / "data.csv")
    save_manifest(manifest, out / "manifest.json")
    print(f"wrote {out / 'data.csv'} ({series.n_samples} x {series.n_vars}) "
          f"and {out / 'manifest.json'}")
    for k, (start, end) in enumerate(spec.boundaries()):
        print(f"  regime {k}: [{start}, {end})  length {end - start}")
    return EXIT_OK


def cmd_fit(args, config: dict, out: Path | None = None,
            seed: int | None = None) -> int:
    data = _section(config, "data")
    csv_path = _pick(getattr(args, "data", None), data, "csv", None)
    if csv_path is None:
        raise ValueError("no input series: pass --data or config data.csv")
    cfg = _model_config(args, config, seed=seed)
    series = TimeSeries.from_csv(csv_path, max_lag=_max_lag(args, config))
    result = run(series, cfg)
    out = out if out is not None else _out_dir(args, config)
    result.save(out / "result.json")
    print(f"wrote {out / 'result.json'}: K={result.n_regimes}, "
          f"iterations={result.diagnostics.get('iterations')}")
    return EXIT_OK


def _evaluate_files(result_path, manifest_path) -> EvalReport:
    result = RunResult.load(result_path)
    manifest = load_manifest(manifest_path)
    return evaluate(
        result.labels, list(result.graphs),
        manifest_labels(manifest), manifest_graphs(manifest),
    )


def _write_report(report: EvalReport, out: Path) -> None:
    report.save(out / "report.json")
    with open(out / "report.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EvalReport.csv_header())
        writer.writerow(report.csv_row())


def _print_report(report: EvalReport) -> None:
    lag = "n/a" if report.lag_f1 is None else f"{report.lag_f1:.3f}"
    print(f"Inst. F1 {report.inst_f1:.3f} | Lag F1 {lag} | "
          f"summary F1 {report.summary_f1:.3f} | "
          f"accuracy {report.regime_accuracy:.3f} | "
          f"K {report.n_regimes_pred}/{report.n_regimes_true}")


def cmd_eval(args, config: dict) -> int:
    report = _evaluate_files(args.result, args.manifest)
    out = _out_dir(args, config)
    _write_report(report, out)
    _print_report(report)
    return EXIT_OK


def cmd_pipeline(args, config: dict) -> int:
    if args.seeds is not None:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    else:
        model = _section(config, "model")
        listed = model.get("seeds")
        if listed:
            seeds = [int(s) for s in listed]
        else:
            seeds = [int(_pick(args.seed, model, "seed", 0))]
    if not seeds:
        raise ValueError("pipeline needs at least one seed")
    out = _out_dir(args, config)
    rows, failures = [], []
    for seed in seeds:
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        try:
            cmd_gen(args, config, out=seed_dir, seed=seed)
            args_fit = argparse.Namespace(**vars(args))
            args_fit.data = str(seed_dir / "data.csv")
            cmd_fit(args_fit, config, out=seed_dir, seed=seed)
            report = _evaluate_files(
                seed_dir / "result.json", seed_dir / "manifest.json"
            )
            _write_report(report, seed_dir)
            _print_report(report)
            rows.append((seed, report))
        except (FitError, FloatingPointError, ValueError, OSError) as exc:
            print(f"seed {seed} failed: {exc}", file=sys.stderr)
            failures.append(seed)
    header = EvalReport.csv_header()
    with open(out / "aggregate.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed"] + header)
        for seed, report in rows:
            writer.writerow([seed] + report.csv_row())
        if rows:
            table = np.array(
                [[np.nan if v == "" else float(v) for v in r.csv_row()]
                 for _, r in rows], dtype=float,
            )
            writer.writerow(["mean"] + [f"{v:.6g}" for v in
                                        np.nanmean(table, axis=0)])
            writer.writerow(["std"] + [f"{v:.6g}" for v in
                                       np.nanstd(table, axis=0)])
        else:
            writer.writerow(["no successful seeds"])
    if failures:
        print(f"failed seeds: {failures}", file=sys.stderr)
    if not rows:
        return EXIT_FIT
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config document")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", help="output directory")


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mechanism", choices=["linear", "nonlinear"],
                        default=None)
    parser.add_argument("--lag", type=int, default=None,
                        help="maximum lag L")
    parser.add_argument("--window", type=int, default=None,
                        help="initial window width W")
    parser.add_argument("--zeta", type=int, default=None,
                        help="minimum regime sample count")
    parser.add_argument("--lambda", dest="sparsity", type=float, default=None,
                        help="sparsity penalty weight")
    parser.add_argument("--threshold", type=float, default=None,
                        help="final edge threshold")
    parser.add_argument("--iters", type=int, default=None,
                        help="maximum EM iterations")


def _add_gen_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-vars", type=int, default=None)
    parser.add_argument("--n-regimes", type=int, default=None)
    parser.add_argument("--mean-degree", type=float, default=None,
                        help="mean degree of each lagged graph")
    parser.add_argument("--noise-scale", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regimedag",
        description="Regime discovery and temporal graph learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p_gen)
    _add_model_flags(p_gen)
    _add_gen_flags(p_gen)

    p_fit = sub.add_parser("fit", help="fit regimes and graphs to a CSV")
    _add_common(p_fit)
    _add_model_flags(p_fit)
    p_fit.add_argument("--data", help="input series CSV")

    p_eval = sub.add_parser("eval", help="score a result against a manifest")
    _add_common(p_eval)
    p_eval.add_argument("--result", required=True)
    p_eval.add_argument("--manifest", required=True)

    p_pipe = sub.add_parser("pipeline", help="gen + fit + eval over seeds")
    _add_common(p_pipe)
    _add_model_flags(p_pipe)
    _add_gen_flags(p_pipe)
    p_pipe.add_argument("--seeds", help="comma-separated seed list")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        if args.command == "gen":
            return cmd_gen(args, config)
        if args.command == "fit":
            return cmd_fit(args, config)
        if args.command == "eval":
            return cmd_eval(args, config)
        return cmd_pipeline(args, config)
    except FitError as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except FloatingPointError as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
