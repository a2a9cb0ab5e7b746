"""Command-line entry point: ``eval``, ``fit``, ``render`` and ``sweep``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import formats, losslab, metrics
from .core import DEFAULT_EPS, SaliencyMap, check_eps, normalize_to_distribution
from .errors import SaliencyError, ShapeMismatch
from .fit import LossSpec, fit_gmm
from .gmm import MAX_COMPONENTS, rasterize

# metric -> inputs it needs besides the prediction
_NEEDS = {
    "kldiv": "gt",
    "cc": "gt",
    "sim": "gt",
    "emd": "gt",
    "nss": "fix",
    "auc": "fix",
    "ig": "fix",
    "sauc": "negatives",
}


class CliError(Exception):
    """A failure that should be reported to the user and end with exit code 1."""


# --- eval ---------------------------------------------------------------------------


@dataclass
class EvalItem:
    stem: str
    pred: Path
    gt: Optional[Path]
    fix: Optional[Path]
    negatives: Optional[Path]


def _collect(path: Path, suffixes) -> dict[str, Path]:
    if path.is_dir():
        found = sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in suffixes)
        stems: dict[str, Path] = {}
        for p in found:
            if p.stem in stems:
                raise CliError(f"{path}: two files share the stem {p.stem!r}")
            stems[p.stem] = p
        return stems
    if path.is_file():
        return {path.stem: path}
    raise CliError(f"{path}: no such file or directory")


def _pair(preds: dict, other: Optional[Path], label: str, suffixes, single: bool) -> dict:
    """Map each prediction stem to its file in ``other`` (directory) or to ``other`` itself."""
    if other is None:
        return {stem: None for stem in preds}
    if other.is_file() and (single or label == "negatives"):
        return {stem: other for stem in preds}
    if not other.is_dir():
        raise CliError(f"{other}: expected a directory of {label} files")
    found = _collect(other, suffixes)
    missing = sorted(set(preds) - set(found))
    if missing:
        expected = ", ".join(str(other / f"{s}{suffixes[0]}") for s in missing)
        raise CliError(f"missing {label} file(s): {expected}")
    extra = sorted(set(found) - set(preds))
    if extra:
        raise CliError(f"{other}: {label} files without a prediction: {', '.join(extra)}")
    return {stem: found[stem] for stem in preds}


def build_items(pred: Path, gt, fix, negatives) -> list[EvalItem]:
    preds = _collect(pred, formats.MAP_SUFFIXES)
    if not preds:
        raise CliError(f"{pred}: no prediction maps found")
    single = pred.is_file()
    gts = _pair(preds, gt, "ground-truth", formats.MAP_SUFFIXES, single)
    fixes = _pair(preds, fix, "fixation", formats.FIXATION_SUFFIXES, single)
    negs = _pair(preds, negatives, "negatives", formats.FIXATION_SUFFIXES, single)
    return [EvalItem(s, preds[s], gts[s], fixes[s], negs[s]) for s in sorted(preds)]


def _evaluate_item(item: EvalItem, selected: tuple, eps: float, baseline_path: Optional[Path]):
    """Worker body: returns ``(stem, values, None)`` or ``(stem, None, message)``."""
    try:
        P = formats.read_map(item.pred)
        Q = F = N = B = None
        if item.gt is not None:
            Q = formats.read_map(item.gt)
            if Q.shape != P.shape:
                raise ShapeMismatch(f"{item.pred} is {P.shape[0]}x{P.shape[1]} but {item.gt} is {Q.shape[0]}x{Q.shape[1]}")
        if item.fix is not None:
            if not item.fix.is_file():
                raise CliError(f"{item.fix}: fixation file not found")
            F = formats.read_fixations(item.fix, P.shape)
        if item.negatives is not None:
            N = formats.read_fixations(item.negatives, P.shape)
        if baseline_path is not None:
            B = formats.read_map(baseline_path)
            if B.shape != P.shape:
                raise ShapeMismatch(f"baseline {baseline_path} does not match {item.pred}")
        report = metrics.evaluate_all(P, Q, F, N, B, eps, uniform_baseline=True, metrics=selected)
    except (SaliencyError, CliError, OSError) as exc:
        msg = str(exc)
        if str(item.pred) not in msg and not any(str(p) in msg for p in (item.gt, item.fix, item.negatives) if p):
            msg = f"{item.pred}: {msg}"
        return item.stem, None, msg
    values = report.as_dict()
    note = None
    if report.emd_shape is not None and tuple(report.emd_shape) != P.shape:
        note = f"{item.stem}: emd computed on {report.emd_shape[0]}x{report.emd_shape[1]} area-averaged grid"
    return item.stem, values, note


def _run_items(items, selected, eps, baseline, jobs):
    args = [(it, selected, eps, baseline) for it in items]
    if jobs <= 1 or len(items) <= 1:
        return [_evaluate_item(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_evaluate_item, *a) for a in args]
        return [f.result() for f in futures]


def _format_value(v) -> str:
    return "" if v is None else repr(float(v))


def render_eval_report(rows: list, selected: Sequence[str], fmt: str, eps: float, notes: list) -> str:
    means = {m: float(np.mean([r[1][m] for r in rows])) for m in selected} if rows else {}
    if fmt == "json":
        doc = {
            "metrics": list(selected),
            "eps": eps,
            "images": [{"image": stem, **{m: vals[m] for m in selected}} for stem, vals in rows],
            "mean": means,
            "notes": notes,
        }
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image", *selected])
    for stem, vals in rows:
        writer.writerow([stem, *(_format_value(vals[m]) for m in selected)])
    writer.writerow(["mean", *(_format_value(means.get(m)) for m in selected)])
    return buf.getvalue()


def cmd_eval(args) -> int:
    eps = check_eps(args.eps)
    available = {"gt": args.gt is not None, "fix": args.fix is not None, "negatives": args.negatives is not None}
    if args.metrics:
        selected = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
        unknown = [m for m in selected if m not in metrics.METRIC_NAMES]
        if unknown:
            raise CliError(f"unknown metric(s) {', '.join(unknown)}; choose from {', '.join(metrics.METRIC_NAMES)}")
        for m in selected:
            if not available[_NEEDS[m]]:
                raise CliError(f"metric {m!r} needs --{_NEEDS[m]}")
            if m == "sauc" and not available["fix"]:
                raise CliError("metric 'sauc' needs --fix")
    else:
        selected = tuple(m for m in metrics.METRIC_NAMES if available[_NEEDS[m]] and (m != "sauc" or available["fix"]))
    if not selected:
        raise CliError("no metric can be computed; supply --gt and/or --fix")
    baseline = None if args.ig_baseline == "uniform" else Path(args.ig_baseline)
    items = build_items(Path(args.pred), _opt_path(args.gt), _opt_path(args.fix), _opt_path(args.negatives))
    results = _run_items(items, selected, eps, baseline, args.jobs)
    rows, notes, failures = [], [], []
    for stem, values, message in results:
        if values is None:
            failures.append(message)
        else:
            rows.append((stem, values))
            if message:
                notes.append(message)
    for note in notes:
        print(f"note: {note}", file=sys.stderr)
    for failure in failures:
        print(f"error: {failure}", file=sys.stderr)
    if failures and not args.keep_partial:
        return 1
    formats.atomic_write(args.out, render_eval_report(rows, selected, args.format, eps, notes))
    return 1 if failures else 0


def _opt_path(value) -> Optional[Path]:
    return None if value is None else Path(value)


# --- fit / render / sweep -----------------------------------------------------------


def cmd_fit(args) -> int:
    Q = normalize_to_distribution(formats.read_map(args.gt))
    spec = LossSpec({"nll": args.nll_weight, **({"cc": args.cc_weight} if args.cc_weight > 0 else {})}, args.eps)
    result = fit_gmm(Q, args.components, args.cov_mode, spec, iters=args.iters, seed=args.seed, lr=args.lr)
    out = Path(args.out)
    trace_path = out.with_name(out.stem + ".trace.csv")
    trace = "iteration,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(result.loss_trace.tolist()))
    formats.atomic_write(trace_path, trace)
    formats.write_gmm(out, result.gmm)
    print(
        f"fit {args.components} components ({args.cov_mode}) in {result.iterations} iterations; best loss {result.best_loss:.6f}",
        file=sys.stderr,
    )
    return 0


def cmd_render(args) -> int:
    g = formats.read_gmm(args.gmm)
    dist = normalize_to_distribution(rasterize(g, args.height, args.width))
    formats.write_pgm(args.out, formats.map_to_pixels(dist), 65535, binary=not args.ascii)
    return 0


def cmd_sweep(args) -> int:
    if args.builtin:
        spec = losslab.builtin_scenario(args.builtin, args.height, args.width)
    else:
        try:
            doc = json.loads(Path(args.spec).read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.spec}: invalid JSON ({exc})") from None
        spec = losslab.spec_from_dict(doc)
    result = losslab.run_sweep(spec)
    losslab.write_sweep(result, args.out, spec)
    return 0


# --- argument parsing ---------------------------------------------------------------


def _components(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 1 <= value <= MAX_COMPONENTS:
        raise argparse.ArgumentTypeError(f"must be between 1 and {MAX_COMPONENTS}, got {value}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saliencykit", description="Saliency map evaluation, mixture fitting and loss sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("eval", help="score predicted maps against ground truth")
    ev.add_argument("--pred", required=True, help="prediction map file or directory (.pgm/.csv)")
    ev.add_argument("--gt", help="ground-truth density file or directory")
    ev.add_argument("--fix", help="fixation CSV file or directory")
    ev.add_argument("--negatives", help="negative fixations for sAUC: one shared CSV or a directory")
    ev.add_argument("--metrics", help=f"comma list from {','.join(metrics.METRIC_NAMES)} (default: all computable)")
    ev.add_argument("--eps", type=float, default=DEFAULT_EPS)
    ev.add_argument("--ig-baseline", default="uniform", help="'uniform' or a baseline map file")
    ev.add_argument("--format", choices=("csv", "json"), default="csv")
    ev.add_argument("--out", required=True)
    ev.add_argument("--jobs", type=_positive_int, default=os.cpu_count() or 1)
    ev.add_argument("--keep-partial", action="store_true", help="write successful rows even if some images fail")
    ev.set_defaults(func=cmd_eval)

    ft = sub.add_parser("fit", help="fit a Gaussian mixture to a ground-truth map")
    ft.add_argument("--gt", required=True)
    ft.add_argument("--components", "-C", type=_components, default=32)
    ft.add_argument("--cov-mode", choices=("diag", "full"), default="diag")
    ft.add_argument("--iters", type=_positive_int, default=2000)
    ft.add_argument("--seed", type=int, default=0)
    ft.add_argument("--lr", type=float, default=1e-4)
    ft.add_argument("--nll-weight", type=float, default=1.0)
    ft.add_argument("--cc-weight", type=float, default=1.0)
    ft.add_argument("--eps", type=float, default=DEFAULT_EPS)
    ft.add_argument("--out", required=True, help="GMM JSON path; the loss trace goes to <stem>.trace.csv")
    ft.set_defaults(func=cmd_fit)

    rd = sub.add_parser("render", help="rasterise a GMM JSON document to a 16-bit PGM")
    rd.add_argument("--gmm", required=True)
    rd.add_argument("--height", type=_positive_int, default=256)
    rd.add_argument("--width", type=_positive_int, default=256)
    rd.add_argument("--ascii", action="store_true", help="write P2 instead of P5")
    rd.add_argument("--out", required=True)
    rd.set_defaults(func=cmd_render)

    sw = sub.add_parser("sweep", help="run a synthetic loss-behaviour sweep")
    src = sw.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", choices=losslab.Scenario.names())
    src.add_argument("--spec", help="sweep spec JSON")
    sw.add_argument("--height", type=_positive_int, default=256, help="raster height for --builtin")
    sw.add_argument("--width", type=_positive_int, default=256, help="raster width for --builtin")
    sw.add_argument("--out", required=True, help="CSV path; the spec is written to <stem>.json")
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, SaliencyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
