"""Command-line driver: ``dysontaylor {expand,kernel,apply,converge,selftest}``.

Every subcommand except ``selftest`` reads one JSON config (``schema: 1``).
Outputs go to ``--out`` and are written atomically (temporary file, then
rename). Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 a
convergence target missed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import _kernels, checks
from .dyson import EllipticityError, OperatorSpec, assemble_P_ell
from .expr import ExprError, ExprSyntaxError
from .grids import Grid
from .kernel import CenterRule, KernelError, apply_kernel, expansion, frak_P
from .opalg import DiffOp
from .study import bump_data, conjugated_spec, dyadic_ladder, oscillating_data, run_convergence, weighted_data
from .verify import NormSpec, SolverError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_TARGET = 0, 2, 3, 4
SCHEMA = 1


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# output


def fmt(value) -> str:
    """17 significant digits, ``.`` decimal separator."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, doc) -> None:
    write_atomic(path, json.dumps(doc, indent=2, sort_keys=False, allow_nan=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    write_atomic(path, buf.getvalue())


# --------------------------------------------------------------------------
# config


def _locate(text: str, needle: str) -> int | None:
    """1-based line of the first occurrence of ``needle`` as a JSON string."""
    pos = text.find(json.dumps(needle))
    return None if pos < 0 else text.count("\n", 0, pos) + 1


class Config:
    def __init__(self, path: Path):
        self.path = Path(path)
        try:
            self.text = self.path.read_text()
        except OSError as exc:
            raise ConfigError(f"{self.path}: cannot read config: {exc.strerror}") from exc
        try:
            self.doc = json.loads(self.text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{self.path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(self.doc, dict):
            raise ConfigError(f"{self.path}: config must be a JSON object")
        if self.doc.get("schema") != SCHEMA:
            raise ConfigError(f"{self.path}: unsupported or missing schema (expected {SCHEMA})")

    def error(self, msg: str, needle: str | None = None) -> ConfigError:
        line = _locate(self.text, needle) if needle else None
        where = f"{self.path}:{line}" if line else str(self.path)
        return ConfigError(f"{where}: {msg}")

    def get(self, key, default=None, required=False):
        if key not in self.doc:
            if required:
                raise self.error(f"missing required field {key!r}")
            return default
        return self.doc[key]

    # typed accessors ------------------------------------------------------

    def operator(self) -> OperatorSpec:
        op = self.get("operator", required=True)
        source, text = self, self.text
        if isinstance(op, str):
            op_path = (self.path.parent / op).resolve()
            try:
                text = op_path.read_text()
                op = json.loads(text)
            except OSError as exc:
                raise self.error(f"cannot read operator file {op_path}: {exc.strerror}", op) from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{op_path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
            source = op_path
        where = source.path if isinstance(source, Config) else source
        try:
            return OperatorSpec.from_json(op)
        except ExprSyntaxError as exc:
            line = _locate(text, exc.text) if exc.text else None
            loc = f"{where}:{line}" if line else str(where)
            raise ConfigError(f"{loc}: in {exc.text!r}: {exc}") from exc
        except (ExprError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: invalid operator: {exc}") from exc

    def mu(self) -> int:
        mu = self.get("mu", required=True)
        if not isinstance(mu, int) or mu < 0:
            raise self.error("mu must be a nonnegative integer")
        return mu

    def mus(self) -> list[int]:
        mus = self.get("mus", [self.get("mu")] if "mu" in self.doc else None)
        if not mus or not all(isinstance(m, int) and m >= 0 for m in mus):
            raise self.error("mus must be a nonempty list of nonnegative integers")
        return list(mus)

    def rules(self) -> list[CenterRule]:
        raw = self.get("rules", [self.get("rule", "x")])
        try:
            return [CenterRule.from_json(r) for r in raw]
        except (ValueError, TypeError, AttributeError) as exc:
            raise self.error(f"invalid center rule: {exc}") from exc

    def ts(self) -> list[float]:
        raw = self.get("ts", {"k_min": 4, "k_max": 10})
        if isinstance(raw, dict):
            ts = dyadic_ladder(int(raw.get("k_min", 4)), int(raw.get("k_max", 10)))
        else:
            ts = [float(t) for t in raw]
        if not ts or any(t <= 0 for t in ts) or any(b >= a for a, b in zip(ts, ts[1:])):
            raise self.error("t ladder must be strictly positive and decreasing")
        return ts

    def grid(self, key="grid") -> Grid:
        raw = self.get(key, required=True)
        try:
            return Grid.from_json(raw)
        except (KeyError, TypeError, ValueError) as exc:
            raise self.error(f"invalid {key}: {exc}") from exc

    def points(self, key: str, dim: int) -> np.ndarray:
        raw = self.get(key, required=True)
        if isinstance(raw, dict):
            try:
                return Grid.from_json(raw).flat_points()
            except (KeyError, TypeError, ValueError) as exc:
                raise self.error(f"invalid {key}: {exc}") from exc
        pts = np.asarray(raw, dtype=float)
        if dim == 1 and pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] != dim:
            raise self.error(f"{key} must be a list of {dim}-dimensional points or a grid")
        return pts

    def data(self):
        raw = self.get("data", {"kind": "bump", "radius": 1.0})
        kind = raw.get("kind", "bump")
        radius = float(raw.get("radius", 1.0))
        center = raw.get("center")
        if kind == "bump":
            return bump_data(radius, center)
        if kind == "oscillating":
            return oscillating_data(radius, center)
        raise self.error(f"unknown data kind {kind!r}", kind)

    def norm(self) -> NormSpec:
        try:
            return NormSpec.from_json(self.get("norm", {}))
        except (ValueError, TypeError) as exc:
            raise self.error(f"invalid norm: {exc}") from exc


# --------------------------------------------------------------------------
# subcommands


def _identity_terms(dim: int) -> list[dict]:
    return DiffOp.identity(dim).to_json_terms()


def cmd_expand(cfg: Config, out: Path) -> int:
    spec = cfg.operator()
    mu = cfg.mu()
    z = cfg.get("z")
    for ell in range(mu + 1):
        terms = _identity_terms(spec.dim) if ell == 0 else assemble_P_ell(spec, ell).to_json_terms()
        write_json(out / f"P_{ell}.json", terms)
    if z is not None:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.shape != (spec.dim,):
            raise cfg.error(f"z must have {spec.dim} components")
        spec.check_ellipticity(z)
        for ell in range(mu + 1):
            write_json(out / f"frakP_{ell}.json", frak_P(spec, ell, z).to_json())
    return EXIT_OK


def cmd_kernel(cfg: Config, out: Path) -> int:
    spec = cfg.operator()
    mu = cfg.mu()
    rule = cfg.rules()[0]
    ts = np.atleast_1d(np.asarray(cfg.get("t", required=True), dtype=float))
    if np.any(ts <= 0):
        raise cfg.error("t values must be positive")
    xs = cfg.points("x", spec.dim)
    ys = cfg.points("y", spec.dim)
    exp = expansion(spec, mu)
    X = np.repeat(xs, len(ys), axis=0)
    Y = np.tile(ys, (len(xs), 1))
    n = spec.dim
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)] + ["value"]
    rows = []
    for t in ts:
        vals = exp.evaluate(float(t), X, Y, rule)
        rows.extend([float(t), *X[p], *Y[p], vals[p]] for p in range(len(vals)))
    write_csv(out / "kernel.csv", header, rows)
    return EXIT_OK


def cmd_apply(cfg: Config, out: Path) -> int:
    spec = cfg.operator()
    mu = cfg.mu()
    rule = cfg.rules()[0]
    grid = cfg.grid()
    data = cfg.data()
    ts = np.atleast_1d(np.asarray(cfg.get("t", required=True), dtype=float))
    if np.any(ts <= 0):
        raise cfg.error("t values must be positive")
    pts = grid.flat_points()
    n = spec.dim
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + ["f", "value"]
    rows = []
    for t in ts:
        f = data(grid.points(), float(t))
        u = apply_kernel(spec, mu, rule, float(t), f, grid).ravel()
        rows.extend([float(t), *pts[p], f.ravel()[p], u[p]] for p in range(len(u)))
    write_csv(out / "apply.csv", header, rows)
    return EXIT_OK


def cmd_converge(cfg: Config, out: Path) -> int:
    spec = cfg.operator()
    weight = float(cfg.get("weight", 0.0))
    data = cfg.data()
    if weight:
        spec = conjugated_spec(spec, weight)
        data = weighted_data(data, weight)
    ref = cfg.get("reference", {})
    result = run_convergence(
        spec,
        data,
        cfg.mus(),
        cfg.rules(),
        cfg.ts(),
        cfg.grid(),
        ns=cfg.norm(),
        tolerance=float(cfg.get("tolerance", 0.3)),
        solver_fraction=float(ref.get("solver_fraction", 0.1)),
        max_levels=int(ref.get("max_levels", 5)),
        steps_per_h=float(ref.get("steps_per_h", 1.0)),
    )
    runs = []
    for (mu, rule), rep in result.reports.items():
        stem = f"converge_mu{mu}_{rule}"
        write_csv(out / f"{stem}.csv", next(iter(rep.csv_rows())), list(rep.csv_rows())[1:])
        summary = {"mu": mu, "rule": rule, **rep.summary()}
        write_json(out / f"{stem}.json", summary)
        runs.append(summary)
    passed = all(r["pass"] is not False for r in runs)
    combined = {
        "schema": SCHEMA,
        "weight": weight,
        "ts": result.ts,
        "reference_errors": result.reference_errors,
        "reference_levels": result.reference_levels,
        "reference_ok": result.reference_ok,
        "runs": runs,
        "pass": passed,
    }
    write_json(out / "converge_summary.json", combined)
    for r in runs:
        status = "degenerate" if r["degenerate"] else ("pass" if r["pass"] else "FAIL")
        print(f"mu={r['mu']} rule={r['rule']}: slope {r['slope']:.3f} ± {r['halfwidth']:.3f}, target {r['target']}: {status}")
    return EXIT_OK if passed else EXIT_TARGET


def cmd_selftest(out: Path | None, seed: int) -> int:
    results = checks.run_all(seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    ok = all(r.passed for r in results)
    if out is not None:
        write_json(out / "selftest.json", {"seed": seed, "pass": ok, "checks": [r.to_json() for r in results]})
    if not ok:
        print("failing invariants: " + ", ".join(r.name for r in results if not r.passed), file=sys.stderr)
    return EXIT_OK if ok else 1


COMMANDS = {"expand": cmd_expand, "kernel": cmd_kernel, "apply": cmd_apply, "converge": cmd_converge}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dysontaylor", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=[*COMMANDS, "selftest"])
    p.add_argument("--config", type=Path, help="JSON run config (schema 1)")
    p.add_argument("--out", type=Path, default=None, help="output directory (default: current directory)")
    p.add_argument("--threads", type=int, default=None, help="worker threads for kernel evaluation")
    p.add_argument("--seed", type=int, default=None, help="seed for randomized checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _kernels.set_threads(args.threads)
    try:
        if args.command == "selftest":
            seed = args.seed if args.seed is not None else 0
            return cmd_selftest(args.out, seed)
        if args.config is None:
            raise ConfigError(f"{args.command} needs --config")
        cfg = Config(args.config)
        out = args.out or Path(cfg.get("out", "."))
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EllipticityError, KernelError, SolverError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
