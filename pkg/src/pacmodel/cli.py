"""Command-line front end.

Subcommands: verify | radius | rate | calc | bound. Configuration can come
from flags or a JSON config file (flags win). Every task writes a
canonical JSON report when --out is given and prints a one-line summary.

Exit codes: 0 verdict computed, 2 usage error, 3 oracle or protocol
error, 4 the guarantee came out vacuous (achieved error rate above 1).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import analysis
from .errors import ModelFormatError, OracleProtocolError, PacModelError
from .learner import LearnerConfig, SplitConfig, TARGETED, UNTARGETED
from .reporting import emit_report
from .runtime import ExternalOracle, InProcessOracle, load_model
from .sampling import (
    NormBallRegion,
    achieved_epsilon,
    max_key_features,
    required_samples_full,
    required_samples_margin,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ORACLE = 3
EXIT_VACUOUS = 4

_DEFAULTS = {
    "eps": 0.01,
    "eta": 0.001,
    "k1": 2000,
    "k2": 8000,
    "coeff_bound": 100.0,
    "seed": 0,
    "threads": 1,
    "split_top": 0.25,
    "channels": 1,
}


class UsageError(Exception):
    pass


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("--model", help="dense model JSON file evaluated in-process")
    p.add_argument("--oracle-cmd", help="command serving the line-oriented oracle protocol")
    p.add_argument("--eps", type=float, help="error rate (default 0.01)")
    p.add_argument("--eta", type=float, help="significance level (default 0.001)")
    p.add_argument("--k1", type=int, help="phase-1 sample count (default 2000)")
    p.add_argument("--k2", type=int, help="phase-2 sample count (default 8000)")
    p.add_argument("--kappa", type=int, help="key-feature budget (default: as many as k2 supports)")
    p.add_argument("--coeff-bound", type=float, help="symmetric coefficient bound B, box [-B, B]")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--threads", type=int, help="worker cap for parallel parts (default 1)")
    p.add_argument("--untargeted", action="store_true", help="learn the single untargeted component")
    p.add_argument("--margin-samples", type=int, help="diagnostic override of the margin resample size")
    p.add_argument("--ols-threshold", type=int, help="free-dimension cutoff for OLS phase 1 (default 1024)")
    p.add_argument("--out", help="write the canonical JSON report here")
    p.add_argument("--timing", action="store_true",
                   help="embed wall-clock seconds in the report file (breaks byte-identical reruns)")
    # stepwise splitting
    p.add_argument("--image-shape", help="HxW pixel shape enabling grid splitting")
    p.add_argument("--split-grid", help="initial grid counts as ROWSxCOLS (default 32x32)")
    p.add_argument("--split-iters", type=int, help="splitting rounds (default 6)")
    p.add_argument("--split-samples", type=int, help="samples per splitting round (default 20000)")
    p.add_argument("--split-top", type=float, help="fraction of grids refined each round (default 0.25)")
    p.add_argument("--channels", type=int, help="image channels, 1 or 3 (default 1)")


def _add_region(p: argparse.ArgumentParser) -> None:
    p.add_argument("--center", required=True,
                   help="comma-separated values, or a path to .npy/.csv/.txt data")
    p.add_argument("--label", type=int, help="1-based target label (default: classify the center)")
    p.add_argument("--clip", help="domain box as LO,HI (default 0,1 for image-shaped input)")
    p.add_argument("--no-clip", action="store_true", help="disable domain clipping")
    p.add_argument("--scale-255", action="store_true", help="divide center values by 255 on load")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pacmodel",
        description="Learn affine PAC models of a black-box classifier and verify robustness.",
    )
    sub = parser.add_subparsers(dest="task", required=True)

    p = sub.add_parser("verify", help="verify PAC-model robustness of one ball")
    _add_shared(p)
    _add_region(p)
    p.add_argument("--radius", type=float, required=True, help="ball radius in input units")

    p = sub.add_parser("radius", help="binary-search the maximum robust radius")
    _add_shared(p)
    _add_region(p)
    p.add_argument("--r-lo", type=float, required=True)
    p.add_argument("--r-hi", type=float, required=True)
    p.add_argument("--scale", default="int8",
                   help="'int8' (8-bit steps, radius k maps to k/255) or 'cont:<tol>'")
    p.add_argument("--radius-unit", type=float,
                   help="input-units size of one int8 step (default 1/255)")

    p = sub.add_parser("rate", help="robustness rate of a dataset at a fixed radius")
    _add_shared(p)
    p.add_argument("--dataset", required=True, help=".npy or CSV matrix, one center per row")
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--clip", help="domain box as LO,HI")
    p.add_argument("--no-clip", action="store_true")
    p.add_argument("--scale-255", action="store_true")

    p = sub.add_parser("calc", help="sample-complexity calculator")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--m", type=int, required=True, help="input dimension")
    p.add_argument("--n", type=int, required=True, help="class count")
    p.add_argument("--k2", type=int, help="also report the key-feature budget for this k2")
    p.add_argument("--k", type=int, help="also report the error rate achieved by k samples")
    p.add_argument("--d", type=int, help="decision variables for --k (default (m+1)(n-1)+1)")
    p.add_argument("--out")
    p.add_argument("--timing", action="store_true")

    p = sub.add_parser("bound", help="verify, then compute the diagnostic adversarial-mass bound")
    _add_shared(p)
    _add_region(p)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--lipschitz", type=float, required=True,
                   help="local Lipschitz constant of the score difference")
    return parser


def _load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return data


def _resolve(args, name: str, default=None):
    value = getattr(args, name, None)
    if value is not None:
        return value
    file_values = getattr(args, "_config_file", {})
    if name in file_values:
        return file_values[name]
    return _DEFAULTS.get(name, default)


def _parse_vector(text: str, scale255: bool) -> np.ndarray:
    if "," in text or all(ch in "0123456789.eE+- " for ch in text):
        try:
            vec = np.asarray([float(v) for v in text.replace(",", " ").split()], dtype=np.float64)
        except ValueError as exc:
            raise UsageError(f"cannot parse vector {text!r}: {exc}") from exc
    else:
        vec = _load_matrix(text).ravel()
    if scale255:
        vec = vec / 255.0
    return vec


def _load_matrix(path) -> np.ndarray:
    try:
        if str(path).endswith(".npy"):
            return np.asarray(np.load(path), dtype=np.float64)
        return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load data from {path}: {exc}") from exc


def _load_dataset(path) -> np.ndarray:
    """Centers as rows, from a CSV/.npy matrix or a directory of one-center
    files (loaded in name order for reproducibility)."""
    if os.path.isdir(path):
        names = sorted(
            n for n in os.listdir(path) if n.endswith((".csv", ".npy", ".txt"))
        )
        if not names:
            raise UsageError(f"dataset directory {path} holds no .csv/.npy/.txt files")
        rows = [_load_matrix(os.path.join(path, n)).ravel() for n in names]
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise UsageError(f"dataset files disagree on dimension: {sorted(widths)}")
        return np.vstack(rows)
    return _load_matrix(path)


def _make_oracle(args):
    model_path = _resolve(args, "model")
    oracle_cmd = _resolve(args, "oracle_cmd")
    if (model_path is None) == (oracle_cmd is None):
        raise UsageError("exactly one of --model or --oracle-cmd is required")
    if model_path is not None:
        return InProcessOracle(load_model(model_path))
    return ExternalOracle(oracle_cmd)


def _parse_split(args, center_len: int) -> SplitConfig | None:
    shape_text = _resolve(args, "image_shape")
    if shape_text is None:
        return None
    try:
        height, width = (int(v) for v in str(shape_text).lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"bad --image-shape {shape_text!r}, expected HxW") from exc
    grid_text = _resolve(args, "split_grid") or "32x32"
    try:
        grid_rows, grid_cols = (int(v) for v in str(grid_text).lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"bad --split-grid {grid_text!r}, expected ROWSxCOLS") from exc
    channels = int(_resolve(args, "channels"))
    if channels * height * width != center_len:
        raise UsageError(
            f"center has {center_len} values but {channels} x {height} x {width} was declared"
        )
    return SplitConfig(
        image_shape=(height, width),
        initial_grid=(grid_rows, grid_cols),
        channels=channels,
        iterations=int(_resolve(args, "split_iters") or 6),
        samples_per_iter=int(_resolve(args, "split_samples") or 20000),
        top_fraction=float(_resolve(args, "split_top")),
    )


def _make_learner_config(args, oracle, center_len: int) -> LearnerConfig:
    eps = float(_resolve(args, "eps"))
    eta = float(_resolve(args, "eta"))
    k2 = int(_resolve(args, "k2"))
    kappa = _resolve(args, "kappa")
    if kappa is None:
        kappa = min(max_key_features(k2, eps, eta), center_len + 1)
    bound = float(_resolve(args, "coeff_bound"))
    try:
        return LearnerConfig(
            epsilon=eps,
            eta=eta,
            k1=int(_resolve(args, "k1")),
            k2=k2,
            kappa=int(kappa),
            coeff_bounds=(-bound, bound),
            mode=UNTARGETED if getattr(args, "untargeted", False) else TARGETED,
            ols_threshold=int(_resolve(args, "ols_threshold") or 1024),
            splitting=_parse_split(args, center_len),
            master_seed=int(_resolve(args, "seed")),
            margin_samples=_resolve(args, "margin_samples"),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _parse_clip(args, image_like: bool):
    if getattr(args, "no_clip", False):
        return None
    text = getattr(args, "clip", None)
    if text is None:
        text = getattr(args, "_config_file", {}).get("clip")
    if text is None:
        return (0.0, 1.0) if image_like else None
    try:
        lo, hi = (float(v) for v in str(text).split(","))
    except ValueError as exc:
        raise UsageError(f"bad --clip {text!r}, expected LO,HI") from exc
    return (lo, hi)


def _config_echo(args, config: LearnerConfig) -> dict:
    echo = {
        "epsilon": config.epsilon,
        "eta": config.eta,
        "k1": config.k1,
        "k2": config.k2,
        "kappa": config.kappa,
        "coeff_bounds": list(config.coeff_bounds),
        "mode": config.mode,
        "seed": config.master_seed,
        "margin_samples": config.margin_sample_count(),
    }
    if config.splitting is not None:
        split = config.splitting
        echo["splitting"] = {
            "image_shape": list(split.image_shape),
            "initial_grid": list(split.initial_grid),
            "channels": split.channels,
            "iterations": split.iterations,
            "samples_per_iter": split.samples_per_iter,
            "top_fraction": split.top_fraction,
        }
    return echo


def _report_components(report: analysis.RobustnessReport) -> list[dict]:
    by_label = {c.label: c for c in report.candidates}
    rows = []
    for extreme in report.components:
        candidate = by_label.get(extreme.label)
        rows.append(
            {
                "label": extreme.label,
                "max_point": extreme.point,
                "max_value": extreme.max_value,
                "candidate": candidate.point if candidate else None,
                "true_difference": candidate.true_difference if candidate else None,
                "validated": candidate.validated if candidate else False,
            }
        )
    return rows


def _finish(args, report: dict, summary: str, seconds: float) -> int:
    report["seconds"] = seconds if getattr(args, "timing", False) else None
    out = getattr(args, "out", None)
    if out:
        emit_report(report, out)
    print(summary)
    if "vacuous_epsilon" in report.get("flags", []):
        return EXIT_VACUOUS
    return EXIT_OK


def _run_verify(args, with_bound: bool = False) -> int:
    center = _parse_vector(args.center, getattr(args, "scale_255", False))
    oracle = _make_oracle(args)
    try:
        config = _make_learner_config(args, oracle, center.size)
        clip = _parse_clip(args, image_like=config.splitting is not None)
        region = NormBallRegion(center=center, radius=args.radius, clip=clip)
        start = time.perf_counter()
        model, report = analysis.verify_region(
            oracle, region, config, label=getattr(args, "label", None),
            workers=int(_resolve(args, "threads")),
        )
        seconds = time.perf_counter() - start
    finally:
        oracle.close()

    doc = {
        "task": "bound" if with_bound else "verify",
        "config": _config_echo(args, config),
        "label": model.label,
        "verdict": report.verdict,
        "margin": report.margin,
        "achieved_epsilon": model.provenance.achieved_eps,
        "components": _report_components(report),
        "queries": report.queries,
        "flags": list(report.flags),
    }
    summary = (
        f"{doc['task']}: {report.verdict} label={model.label} margin={report.margin:.6g} "
        f"queries={report.queries} seconds={seconds:.3f}"
    )
    if with_bound:
        try:
            value = analysis.adversarial_mass_bound(model, args.lipschitz)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        doc["bound"] = None if value == float("inf") else value
        doc["bound_is_diagnostic"] = True
        doc["lipschitz"] = args.lipschitz
        summary += f" mass_bound={value:.6g}"
    return _finish(args, doc, summary, seconds)


def _run_radius(args) -> int:
    center = _parse_vector(args.center, getattr(args, "scale_255", False))
    scale_text = str(args.scale)
    if scale_text == "int8":
        unit = _resolve(args, "radius_unit")
        scale = analysis.Int8Scale(unit=float(unit) if unit else 1.0 / 255.0)
    elif scale_text.startswith("cont:"):
        scale = analysis.ContinuousScale(tolerance=float(scale_text.split(":", 1)[1]))
    else:
        raise UsageError(f"unknown --scale {scale_text!r}, expected 'int8' or 'cont:<tol>'")
    oracle = _make_oracle(args)
    try:
        config = _make_learner_config(args, oracle, center.size)
        clip = _parse_clip(args, image_like=config.splitting is not None)
        start = time.perf_counter()
        result = analysis.max_robust_radius(
            oracle, center, config, args.r_lo, args.r_hi, scale=scale, clip=clip,
            label=getattr(args, "label", None), workers=int(_resolve(args, "threads")),
        )
        seconds = time.perf_counter() - start
    finally:
        oracle.close()
    doc = {
        "task": "radius",
        "config": _config_echo(args, config),
        "scale": scale.name,
        "radius": result.radius,
        "found": result.found,
        "verified_at": [[v, verdict] for v, verdict in result.verified_at],
        "queries": oracle.query_count,
        "flags": [],
    }
    summary = f"radius: max robust radius {result.radius} on {scale.name} scale ({len(result.verified_at)} probes, {seconds:.3f}s)"
    return _finish(args, doc, summary, seconds)


def _run_rate(args) -> int:
    data = _load_dataset(args.dataset)
    if getattr(args, "scale_255", False):
        data = data / 255.0
    oracle = _make_oracle(args)
    try:
        config = _make_learner_config(args, oracle, data.shape[1])
        clip = _parse_clip(args, image_like=config.splitting is not None)
        start = time.perf_counter()
        result = analysis.robustness_rate(
            oracle, data, args.radius, config, clip=clip, workers=int(_resolve(args, "threads"))
        )
        seconds = time.perf_counter() - start
    finally:
        oracle.close()
    doc = {
        "task": "rate",
        "config": _config_echo(args, config),
        "radius": args.radius,
        "rate": result.rate,
        "verdicts": result.verdicts,
        "margins": result.margins,
        "errors": result.errors,
        "queries": oracle.query_count,
        "flags": [],
    }
    summary = f"rate: {result.rate:.4f} robust over {len(result.verdicts)} inputs at radius {args.radius} ({seconds:.3f}s)"
    return _finish(args, doc, summary, seconds)


def _run_calc(args) -> int:
    try:
        k_full = required_samples_full(args.eps, args.eta, args.m, args.n)
        k_margin = required_samples_margin(args.eps, args.eta)
        d_full = (args.m + 1) * (args.n - 1) + 1
        doc = {
            "task": "calc",
            "config": {"epsilon": args.eps, "eta": args.eta, "m": args.m, "n": args.n},
            "k_full": k_full,
            "k_margin": k_margin,
            "decision_variables": d_full,
            "achieved_epsilon_at_k_full": achieved_epsilon(k_full, args.eta, d_full),
            "flags": [],
        }
        parts = [f"K={k_full}", f"K_margin={k_margin}"]
        if args.k2 is not None:
            doc["kappa_max"] = max_key_features(args.k2, args.eps, args.eta)
            parts.append(f"kappa_max={doc['kappa_max']}")
        if args.k is not None:
            d = args.d if args.d is not None else d_full
            value = achieved_epsilon(args.k, args.eta, d)
            doc["achieved_epsilon"] = value
            parts.append(f"achieved_eps={value:.6g}")
            if value > 1.0:
                doc["flags"].append("vacuous_epsilon")
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return _finish(args, doc, "calc: " + " ".join(parts), 0.0)


def run_cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    config_path = getattr(args, "config", None)
    try:
        args._config_file = _load_config_file(config_path) if config_path else {}
        if args.task == "verify":
            return _run_verify(args)
        if args.task == "bound":
            return _run_verify(args, with_bound=True)
        if args.task == "radius":
            return _run_radius(args)
        if args.task == "rate":
            return _run_rate(args)
        if args.task == "calc":
            return _run_calc(args)
        raise UsageError(f"unknown task {args.task!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelFormatError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OracleProtocolError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except PacModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
