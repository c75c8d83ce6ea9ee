"""Command-line driver for inequality sweeps and the desk-scale experiments.

Exit codes: 0 on success, 1 when a verdict is ``violated``, 2 on
configuration errors (the message names the offending field).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import subprocess
import sys
import tempfile
from pathlib import Path

from . import __version__, lattice
from .bounds import VIOLATED, BoundInstance, constants, reports_to_csv, verify, verify_sum
from .estimate import estimator_from_spec
from .events import SumFamily, family_from_spec
from .experiments import (
    CP_COLUMNS, LD_COLUMNS, TR_COLUMNS, compound_poisson, large_deviation, truncation_check,
)
from .fields import model_from_spec


class ConfigError(Exception):
    pass


def version_string() -> str:
    """Package version with a ``git describe`` suffix when run from a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rows_to_csv(columns: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def emit(args, name: str, csv_text: str, payload: dict):
    """Print in the chosen format and, with ``--out``, write both files."""
    doc = {"command": name, "version": version_string(), **payload}
    json_text = json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n"
    if args.out:
        out = Path(args.out)
        write_atomic(out / f"{name}.csv", csv_text)
        write_atomic(out / f"{name}.json", json_text)
    sys.stdout.write(csv_text if args.format == "csv" else json_text)


# --------------------------------------------------------------------------
# config parsing


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config: top level must be a JSON object")
    return cfg


def _build(section: str, fn, spec):
    if not isinstance(spec, dict):
        raise ConfigError(f"{section}: expected an object")
    try:
        return fn(spec)
    except KeyError as exc:
        raise ConfigError(f"{section}.{exc.args[0]}: missing") from exc
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(section) else f"{section}: {msg}") from exc


def parse_lambda(spec, d: int | None) -> lattice.SiteSet:
    if not isinstance(spec, dict):
        raise ConfigError("lambda: expected an object with 'box', 'points' or 'line'")
    try:
        if "box" in spec:
            lam = lattice.box(spec["box"], spec.get("origin"))
        elif "points" in spec:
            lam = lattice.site_set(spec["points"])
        elif "line" in spec:
            lam = lattice.line(int(spec["line"]), int(spec.get("start", 1)))
        else:
            raise ConfigError("lambda: needs one of 'box', 'points', 'line'")
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"lambda: {exc}") from exc
    if not lam:
        raise ConfigError("lambda: empty index set")
    if d is not None and lattice.dimension(lam) != d:
        raise ConfigError(f"lambda: dimension {lattice.dimension(lam)} does not match d={d}")
    return lam


def _as_list(x):
    return x if isinstance(x, list) else [x]


def _get(cfg: dict, key: str, kind, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"{key}: missing")
        return default
    try:
        return kind(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {cfg[key]!r}") from exc


# --------------------------------------------------------------------------
# commands


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    if not cfg:
        raise ConfigError("config: verify needs --config")
    d = _get(cfg, "d", int) if "d" in cfg else None
    m = _get(cfg, "m", int)
    if m < 0:
        raise ConfigError("m: must be >= 0")
    lam = parse_lambda(cfg.get("lambda"), d)
    est_spec = dict(cfg.get("estimator", {"backend": "exact"}))
    if args.seed is not None:
        est_spec["seed"] = args.seed
    if args.samples is not None:
        est_spec["n_samples"] = args.samples
    models = [_build("model", model_from_spec, s) for s in _as_list(cfg.get("model"))]
    families = [_build("family", family_from_spec, s) for s in _as_list(cfg.get("family"))]
    reports = []
    for model in models:
        if d is not None and getattr(model, "d", d) != d:
            raise ConfigError(f"model.offsets: dimension {model.d} does not match d={d}")
        for fam in families:
            inst = BoundInstance(fam, lam, m)
            est = _build("estimator", lambda s: estimator_from_spec(s, model, inst.window, args.workers), est_spec)
            if args.direct_sum and isinstance(fam, SumFamily):
                reports.append(verify_sum(fam.target, lam, m, est, args.pointwise))
            else:
                reports.append(verify(inst, est, args.pointwise))
    emit(args, "verify", reports_to_csv(reports), {"config": cfg, "estimator": est_spec,
                                                  "reports": [r.to_dict() for r in reports]})
    return 1 if any(r.verdict == VIOLATED for r in reports) else 0


def _merged(args, cfg: dict, names: list[str]) -> dict:
    out = {}
    for name in names:
        val = getattr(args, name)
        out[name] = val if val is not None else cfg.get(name)
    return out


def cmd_compound_poisson(args) -> int:
    cfg = load_config(args.config)
    p = _merged(args, cfg, ["rate", "n", "m", "k_max", "backend", "samples", "seed", "confidence"])
    try:
        rep = compound_poisson(
            float(p["rate"] if p["rate"] is not None else 1.0), int(p["n"] or 12),
            int(p["m"] if p["m"] is not None else 1), int(p["k_max"] or 3), p["backend"] or "exact",
            int(p["samples"] or 100_000), int(p["seed"] or 0), float(p["confidence"] or 0.99), args.workers,
        )
    except ValueError as exc:
        raise ConfigError(f"compound-poisson: {exc}") from exc
    emit(args, "compound_poisson", rows_to_csv(CP_COLUMNS, rep.csv_rows()), {"report": rep.to_dict()})
    return 0 if rep.ok else 1


def cmd_large_dev(args) -> int:
    cfg = load_config(args.config)
    p = _merged(args, cfg, ["alpha", "n", "m", "x", "offsets", "samples", "seed", "confidence"])
    offsets = [[o] for o in p["offsets"]] if p["offsets"] is not None else None
    try:
        rep = large_deviation(
            float(p["alpha"] or 0.8), int(p["n"] or 1000), int(p["m"] or 0), p["x"] or [5.0, 10.0],
            int(p["samples"] or 100_000), int(p["seed"] or 0), float(p["confidence"] or 0.99),
            args.workers, offsets,
        )
    except ValueError as exc:
        raise ConfigError(f"large-dev: {exc}") from exc
    emit(args, "large_dev", rows_to_csv(LD_COLUMNS, rep.csv_rows()), {"report": rep.to_dict()})
    return 0


def cmd_truncation(args) -> int:
    cfg = load_config(args.config)
    p = _merged(args, cfg, ["alpha", "n", "x", "delta", "samples", "seed", "confidence"])
    try:
        rep = truncation_check(
            float(p["alpha"] or 0.8), int(p["n"] or 1000), float(p["x"] or 10.0), float(p["delta"] or 0.05),
            int(p["samples"] or 100_000), int(p["seed"] or 0), float(p["confidence"] or 0.99), args.workers,
        )
    except ValueError as exc:
        raise ConfigError(f"truncation: {exc}") from exc
    emit(args, "truncation", rows_to_csv(TR_COLUMNS, rep.csv_rows()), {"report": rep.to_dict()})
    return 0


def cmd_constants(args) -> int:
    ds = [args.d] if args.d is not None else [1, 2, 3]
    ms = [args.m] if args.m is not None else [0, 1, 2]
    rows = []
    for d in ds:
        for m in ms:
            c1, c2 = constants(d, m)
            rows.append([d, m, repr(c1), repr(c2)])
    text = rows_to_csv(["d", "m", "c1", "c2"], rows)
    if args.format == "json":
        text = json.dumps([{"d": r[0], "m": r[1], "c1": float(r[2]), "c2": float(r[3])} for r in rows], indent=2) + "\n"
    sys.stdout.write(text)
    return 0


def cmd_boundary(args) -> int:
    if args.box:
        lam = lattice.box(args.box)
    elif args.points:
        try:
            lam = lattice.site_set(json.loads(args.points))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ConfigError(f"points: {exc}") from exc
    elif args.line:
        lam = lattice.line(args.line)
    else:
        lam = parse_lambda(load_config(args.config).get("lambda"), None)
    outer, inner = lattice.boundary_parts(lam, args.m)
    bd = outer | inner
    win = lattice.window(lam, args.m)
    npairs = sum(1 for _ in lattice.far_pairs(lam, args.m))
    lines = [f"|Lambda| = {len(lam)}", f"|window| = {len(win)}", f"|∂Λ| = {len(bd)}", f"far pairs = {npairs}"]
    if not bd:
        lines.append("∂Λ = ∅")
    else:
        lines.append("outer: " + " ".join(str(p) for p in sorted(outer)))
        lines.append("inner: " + " ".join(str(p) for p in sorted(inner)))
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="directory for <command>.csv and <command>.json")
    common.add_argument("--format", choices=["csv", "json"], default="csv", help="stdout format")
    common.add_argument("--seed", type=int, help="Monte Carlo seed")
    common.add_argument("--samples", type=int, help="Monte Carlo sample count")
    common.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on it)")

    parser = argparse.ArgumentParser(prog="bonfield", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="check the block inequality for one config")
    p.add_argument("--pointwise", action="store_true", help="also check the indicator form on every outcome")
    p.add_argument("--direct-sum", action="store_true", help="evaluate sum families on partial sums directly")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compound-poisson", parents=[common], help="pattern counts of Y_i = Y_{i+1} = 1")
    p.add_argument("--rate", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--backend", choices=["exact", "mc"])
    p.add_argument("--confidence", type=float)
    p.set_defaults(func=cmd_compound_poisson)

    p = sub.add_parser("large-dev", parents=[common], help="heavy-tailed sums against their block reduction")
    p.add_argument("--alpha", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--x", type=float, nargs="+")
    p.add_argument("--offsets", type=int, nargs="+", help="moving-sum offsets (default 0..m)")
    p.add_argument("--confidence", type=float)
    p.set_defaults(func=cmd_large_dev)

    p = sub.add_parser("truncation", parents=[common], help="effect of dropping small summands")
    p.add_argument("--alpha", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--x", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--confidence", type=float)
    p.set_defaults(func=cmd_truncation)

    p = sub.add_parser("constants", parents=[common], help="print c1, c2")
    p.add_argument("--d", type=int)
    p.add_argument("--m", type=int)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("boundary", parents=[common], help="print the boundary of an index set")
    p.add_argument("--box", type=int, nargs="+")
    p.add_argument("--points", help="JSON list of points")
    p.add_argument("--line", type=int)
    p.add_argument("--m", type=int, default=1)
    p.set_defaults(func=cmd_boundary)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
