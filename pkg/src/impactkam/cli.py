"""Command-line front end.

Every command reads a YAML config validated against ``schema/config.schema.json``
and writes CSV files with fixed headers, each with a ``.meta.json`` sidecar
holding the config hash and library version. Exit codes: 0 success,
2 configuration error, 3 numerical failure (``failure.json`` is written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from . import dynamics as dyn
from .certify import SectionCurve, confinement_run, run_audit
from .errors import ImpactKamError, NotConverged, SmallDivisorBreakdown
from .fourier import grid
from .kam import solve_curve
from .rotation import GOLDEN_OMEGA, diophantine_margin, frequency_ladder

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

COMMANDS = ("simulate", "impact-map", "find-curve", "sweep-ladder", "certify", "audit")


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def load_schema() -> dict:
    text = resources.files("impactkam").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def _node_line(root, path) -> int | None:
    """1-based source line of the YAML node at ``path`` (deepest existing ancestor)."""
    node = root
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse and validate; raises :class:`ConfigError` with a line-numbered message."""
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping")
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            path = list(err.absolute_path)
            if err.validator == "additionalProperties":
                extra = [k for k in err.instance if k not in err.schema.get("properties", {})]
                path = path + extra[:1]
            line = _node_line(root, path)
            loc = "/".join(str(p) for p in path) or "<root>"
            lines.append(f"{source}:{line}: {loc}: {err.message}")
        raise ConfigError("\n".join(lines))
    return data


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    return parse_config(text, path)


def section(cfg: dict, name: str) -> dict:
    """Config section with schema defaults filled in."""
    props = load_schema()["properties"][name]["properties"]
    out = {k: v["default"] for k, v in props.items() if "default" in v}
    out.update(cfg.get(name, {}))
    return out


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def forcing_from(cfg: dict) -> dyn.ForcingSpec:
    f = section(cfg, "forcing")
    try:
        return dyn.ForcingSpec(a0=f["a0"], ak=tuple(f["ak"]), bk=tuple(f["bk"]), rho=f["rho"])
    except ValueError as exc:
        raise ConfigError(f"forcing: {exc}") from exc


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Writer:
    """Collects output files; each CSV gets a metadata sidecar."""

    def __init__(self, out_dir: Path, command: str, cfg: dict):
        self.out = out_dir
        self.meta = {"command": command, "config_sha256": config_hash(cfg), "version": __version__}

    def csv(self, name: str, header: list[str], rows) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.json(name.rsplit(".", 1)[0] + ".meta.json", {**self.meta, "file": name, "columns": header})
        return path

    def json(self, name: str, payload: dict) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        body = {**self.meta, **payload} if not name.endswith(".meta.json") else payload
        path.write_text(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n")
        return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg, w: Writer, args) -> None:
    if "simulate" not in cfg:
        raise ConfigError("simulate: section required")
    s = section(cfg, "simulate")
    forcing = forcing_from(cfg)
    T, Y = dyn.iterate_impact_map(s["t0"], s["y0"], s["n_impacts"], cfg["epsilon"], forcing)
    rows = ((i, t, t % (2 * math.pi), y, -0.5 * y * y) for i, (t, y) in enumerate(zip(T, Y)))
    w.csv("orbit.csv", ["impact_index", "t", "t_mod_2pi", "y", "E"], rows)


def cmd_impact_map(cfg, w: Writer, args) -> None:
    if "impact_map" not in cfg:
        raise ConfigError("impact_map: section required")
    s = section(cfg, "impact_map")
    T, Y = np.meshgrid(grid(s["n_t"]), np.asarray(s["y_values"], float), indexing="ij")
    out = dyn.impact_map(T.ravel(), Y.ravel(), cfg["epsilon"], forcing_from(cfg))
    det = np.linalg.det(out.jacobian)
    rows = zip(T.ravel(), Y.ravel(), out.t_bar, out.y_bar, out.alpha, out.f_t0, out.f_y0, det)
    w.csv("impact_map.csv", ["t0", "y0", "t_bar", "y_bar", "alpha", "f_t0", "f_y0", "det_jacobian"], rows)


def _ladder_setup(cfg):
    lad = section(cfg, "ladder")
    omega0 = lad.get("omega0", GOLDEN_OMEGA)
    return lad, omega0


def _solve_rung(cfg, k, omega, y0_star):
    """Solve one rung; returns the curve, report and scaled map."""
    kam = section(cfg, "kam")
    eps = cfg["epsilon"]
    F = dyn.ScaledImpactMap(dyn.ScaledMapSpec(y0_star, eps), forcing_from(cfg), kam["jacobian"])
    curve, report = solve_curve(
        F,
        omega,
        tol=kam["tol"],
        max_iter=kam["max_iter"],
        order=kam["order"],
        divisor_floor=kam["divisor_floor"],
        rotation_iter=kam["rotation_iter"],
    )
    return curve, report, F


def _target(cfg):
    lad, omega0 = _ladder_setup(cfg)
    eps = cfg["epsilon"]
    a0 = section(cfg, "forcing")["a0"]
    if "omega" in lad:
        omega = lad["omega"]
        k = lad["k"]
    else:
        k = lad["k"]
        omega = omega0 + 2 * math.pi * k
    y0_star = omega * (1 - (a0 * eps) ** 2) / 4
    return k, omega, y0_star


def cmd_find_curve(cfg, w: Writer, args) -> None:
    k, omega, y0_star = _target(cfg)
    curve, report, F = _solve_rung(cfg, k, omega, y0_star)
    m = 4 * curve.order
    theta = grid(m)
    u, v = curve.points(theta)
    t0, y0 = F.to_section(u, v)
    rows = zip(theta, curve.phi_part(theta), curve.I_part(theta), t0, y0)
    w.csv("curve.csv", ["theta", "phi_phi", "phi_I", "t0", "y0"], rows)
    _write_report(w, report, {"k": k, "omega": omega, "y0_star": y0_star})


def _write_report(w: Writer, report, extra: dict) -> None:
    hist = [
        (i, h.error_norm, h.deriv_error_norm, h.avgA, h.correction_norm, h.exactness_residual)
        for i, h in enumerate(report.history)
    ]
    w.csv(
        "kam_report.csv",
        ["iteration", "error_norm", "deriv_error_norm", "avgA", "correction_norm", "exactness_residual"],
        hist,
    )
    w.json("kam_report.json", {**extra, **report.as_dict()})


def _sweep_job(payload):
    cfg, rung = payload
    try:
        _, rep, F = _solve_rung(cfg, rung.k, rung.omega, rung.y0_star)
        twist = abs(float(F.alpha_prime(F.I0_star)))
        return rung, rep, twist, ""
    except ImpactKamError as exc:
        rep = getattr(exc, "report", None)
        return rung, rep, math.nan, f"{type(exc).__name__}: {exc}"


def cmd_sweep_ladder(cfg, w: Writer, args) -> None:
    lad, omega0 = _ladder_setup(cfg)
    eps = cfg["epsilon"]
    a0 = section(cfg, "forcing")["a0"]
    k_lo, k_hi = lad["k_range"]
    ladder = frequency_ladder(eps, a0, omega0, range(k_lo, k_hi + 1))
    gamma, q = diophantine_margin(omega0, lad["nu"], lad["q_max"])
    jobs = [(cfg, r) for r in ladder.rungs]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = []
    for rung, rep, twist, err in results:
        rows.append(
            (
                rung.k, rung.omega, rung.y0_star, gamma, q, twist,
                rep.verdict if rep else "error",
                rep.iterations if rep else 0,
                rep.final_error if rep else math.nan,
                rep.quadratic_decay if rep else False,
                rep.rotation_check if rep else math.nan,
                err,
            )
        )
    w.csv(
        "ladder.csv",
        ["k", "omega", "y0_star", "gamma", "worst_q", "abs_alpha_prime", "verdict", "iterations",
         "final_error", "quadratic_decay", "rotation_check", "error"],
        rows,
    )
    w.json("ladder_dropped.json", {"dropped": [r._asdict() for r in ladder.dropped]})
    if any(err for *_, err in results):
        raise NotConverged("at least one ladder rung failed; see ladder.csv")


def cmd_certify(cfg, w: Writer, args) -> None:
    c = section(cfg, "certify")
    eps = cfg["epsilon"]
    forcing = forcing_from(cfg)
    lad, omega0 = _ladder_setup(cfg)
    a0 = section(cfg, "forcing")["a0"]
    rungs = {r.k: r for r in frequency_ladder(eps, a0, omega0, (c["k_inner"], c["k_outer"]))}
    if set(rungs) != {c["k_inner"], c["k_outer"]}:
        raise ConfigError("certify: both rungs must have y0_star > 5")
    curves = []
    for k in (c["k_inner"], c["k_outer"]):
        r = rungs[k]
        if c["control"]:
            curves.append(SectionCurve.flat(r.y0_star))
        else:
            curve, _, _ = _solve_rung({**cfg, "kam": {**cfg.get("kam", {}), "rotation_iter": 0}}, k, r.omega, r.y0_star)
            curves.append(SectionCurve.from_scaled(curve, r.y0_star))
    rep = confinement_run(
        curves[0], curves[1], c["n_trials"], c["n_impacts"], eps, forcing,
        seed=cfg.get("seed", 0), workers=args.workers, chunk=c["chunk"],
    )
    trials = rep.trial_rows()
    header = list(trials[0].keys())
    w.csv("confinement.csv", header, ([t[h] for h in header] for t in trials))
    w.json("confinement.json", {**rep.summary(), "control": c["control"]})


def cmd_audit(cfg, w: Writer, args) -> None:
    a = section(cfg, "audit")
    rows = run_audit(
        cfg["epsilon"], forcing_from(cfg), y_values=tuple(a["y_values"]), n_t=a["n_t"],
        E0_const=a["E0"], n_quad=a["n_quad"],
    )
    w.csv("audit.csv", ["check", "measured", "threshold", "passed", "note"],
          ((r.check, r.measured, r.threshold, r.passed, r.note) for r in rows))


HANDLERS = {
    "simulate": cmd_simulate,
    "impact-map": cmd_impact_map,
    "find-curve": cmd_find_curve,
    "sweep-ladder": cmd_sweep_ladder,
    "certify": cmd_certify,
    "audit": cmd_audit,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="impactkam", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, metavar="PATH")
        s.add_argument("--out", metavar="DIR", help="output directory (overrides config 'output')")
        s.add_argument("--workers", type=int, default=1, metavar="N")
        s.add_argument("--seed", type=int, metavar="U64", help="overrides config 'seed'")
    return p


def _failure_record(exc: Exception) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, SmallDivisorBreakdown):
        rec.update(k=exc.k, divisor=exc.divisor, floor=exc.floor)
    report = getattr(exc, "report", None)
    if report is not None:
        rec["report"] = report.as_dict()
    return rec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    warnings.filterwarnings("once", category=dyn.ValidityWarning)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg["seed"] = args.seed
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        if abs(section(cfg, "forcing")["a0"] * cfg["epsilon"]) >= 0.5:
            raise ConfigError("forcing/a0 and epsilon: |a0*epsilon| must be < 1/2")
        out_dir = Path(args.out or cfg.get("output", "out"))
        writer = Writer(out_dir, args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        HANDLERS[args.command](cfg, writer, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ImpactKamError as exc:
        writer.json("failure.json", _failure_record(exc))
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {args.command} results to {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
