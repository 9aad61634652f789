"""Numerical audits of the impact map and the confinement experiment."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import dynamics as dyn
from .dynamics import ForcingSpec
from .errors import DomainEscape, ImpactKamError
from .fourier import TWO_PI, PeriodicFn, grid
from .kam import CurveParametrization

# ---------------------------------------------------------------------------
# Structural checks
# ---------------------------------------------------------------------------


def _mesh(section_grid):
    t, y = (np.asarray(g, dtype=float) for g in section_grid)
    return np.meshgrid(t, y, indexing="ij")


def check_symplectic(map_id: str, section_grid, eps: float, forcing: ForcingSpec, y0_star: float | None = None) -> float:
    """Maximum of ``|det DF - 1|`` over a ``(t0, y0)`` grid.

    ``section_grid`` is ``(t_values, y_values)``; the points are converted to
    the coordinates of ``map_id`` (``energy``, ``impact`` or ``scaled``).
    """
    T, Y = _mesh(section_grid)
    if map_id == "energy":
        second = dyn.energy_from_velocity(Y)
    elif map_id == "impact":
        second = Y
    elif map_id == "scaled":
        if y0_star is None:
            raise ValueError("scaled map needs y0_star")
        second = dyn.action_from_velocity(Y, y0_star)
    else:
        raise ValueError(f"unknown map id {map_id!r}")
    jac = dyn.jacobian(map_id, (T, second), eps, forcing, y0_star=y0_star)
    return float(np.max(np.abs(np.linalg.det(jac) - 1.0)))


def _loop_functional(t0, t_bar, w_bar, w0):
    """``|∫ (w̄ · dt̄/dt0 - w0) dt0|`` by spectral quadrature on the node set ``t0``."""
    n = t0.size
    drift = PeriodicFn.from_samples(t_bar - t0, (n - 1) // 2)
    dt = 1.0 + drift.derivative().samples(n)
    return abs(TWO_PI * float(np.mean(w_bar * dt - w0)))


def check_exactness(
    map_id: str,
    E0_const: float,
    eps: float,
    forcing: ForcingSpec,
    n_quad: int = 512,
) -> float:
    """Loop integral of ``E dt`` (``map_id='energy'``) or ``y dt`` (``'impact'``) over the circle ``E0 = const``.

    For an exact map the first vanishes; the second is a control that
    generically does not.
    """
    t0 = grid(n_quad)
    y0 = float(dyn.velocity_from_energy(E0_const))
    out = dyn.impact_map(t0, np.full(n_quad, y0), eps, forcing)
    if map_id == "energy":
        return _loop_functional(t0, out.t_bar, dyn.energy_from_velocity(out.y_bar), E0_const)
    if map_id == "impact":
        return _loop_functional(t0, out.t_bar, out.y_bar, y0)
    raise ValueError(f"unknown map id {map_id!r}")


@dataclass(frozen=True)
class TauStarReport:
    worst_ratio: float
    decay_exponent: float
    y_values: tuple[float, ...]
    max_abs_tau_star: tuple[float, ...]

    @property
    def passed(self) -> bool:
        return self.worst_ratio < 1.0


def loglog_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0) or x.size < 2:
        return math.nan
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def check_tau_star_bounds(eps: float, forcing: ForcingSpec, y_grid, t_grid) -> TauStarReport:
    """Worst ``|τ*|·|y0| / (32 p̃)`` over the grid for both half maps, and the decay exponent in ``y0``."""
    y_grid = np.asarray(y_grid, dtype=float)
    if np.any(y_grid <= dyn.Y0_TRUSTED):
        raise ValueError(f"y grid must lie above {dyn.Y0_TRUSTED}")
    T, Y = _mesh((t_grid, y_grid))
    plus = dyn.impact_time_plus(T, Y, eps, forcing)
    minus = dyn.impact_time_minus(T, -Y, eps, forcing)
    ts = np.maximum(np.abs(plus.tau_star), np.abs(minus.tau_star))
    scale = 32.0 * forcing.p_tilde
    worst = float(np.max(ts * Y) / scale)
    per_y = np.max(np.abs(plus.tau_star), axis=0)
    return TauStarReport(
        worst_ratio=worst,
        decay_exponent=loglog_slope(y_grid, per_y),
        y_values=tuple(float(v) for v in y_grid),
        max_abs_tau_star=tuple(float(v) for v in per_y),
    )


@dataclass(frozen=True)
class PerturbationSizes:
    """Per amplitude: sup over angles of ``|f_t0|``, ``|f_y0|`` and ``|∂_y0 f_t0|``."""

    y_values: tuple[float, ...]
    max_f_t0: tuple[float, ...]
    max_f_y0: tuple[float, ...]
    max_dy_f_t0: tuple[float, ...]

    @property
    def f_spread(self) -> float:
        """Largest max/min ratio of the two sup-norms across amplitudes."""
        a = np.asarray(self.max_f_t0)
        b = np.asarray(self.max_f_y0)
        return float(max(a.max() / a.min(), b.max() / b.min()))

    @property
    def derivative_halving(self) -> tuple[float, ...]:
        d = np.asarray(self.max_dy_f_t0)
        return tuple(float(v) for v in d[1:] / d[:-1])


def perturbation_sizes(eps: float, forcing: ForcingSpec, y_values, t_grid, shell_points: int = 64) -> PerturbationSizes:
    """Sizes of the perturbative parts of the impact map.

    Each entry is a sup over ``t_grid`` and over the doubling shell
    ``[y, 2y)`` sampled at ``shell_points`` amplitudes (``0`` gives the sup
    at ``y`` alone). Pointwise sups carry resonance factors such as
    ``|sin 2y|`` for ``p = cos t`` that oscillate with ``y``; the shell sup
    measures the envelope. ``∂_y0 f_t0`` comes from the analytic Jacobian.
    """
    if eps <= 0:
        raise ValueError("perturbation sizes need eps > 0")
    cols = {"f_t0": [], "f_y0": [], "dy": []}
    for y in y_values:
        ys = np.linspace(y, 2.0 * y, shell_points, endpoint=False) if shell_points else np.array([y])
        T, Y = _mesh((t_grid, ys))
        out = dyn.impact_map(T, Y, eps, forcing)
        dy_f_t0 = (out.jacobian[..., 0, 1] - 4.0 / (1.0 - (forcing.a0 * eps) ** 2)) / eps
        cols["f_t0"].append(float(np.max(np.abs(out.f_t0))))
        cols["f_y0"].append(float(np.max(np.abs(out.f_y0))))
        cols["dy"].append(float(np.max(np.abs(dy_f_t0))))
    return PerturbationSizes(
        tuple(float(v) for v in y_values), tuple(cols["f_t0"]), tuple(cols["f_y0"]), tuple(cols["dy"])
    )


# ---------------------------------------------------------------------------
# Section curves and confinement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SectionCurve:
    """A curve on Σ⁺ written as a graph ``y = Y(t)`` over the section angle."""

    y_of_t: PeriodicFn

    @classmethod
    def flat(cls, y: float) -> SectionCurve:
        return cls(PeriodicFn.constant(y))

    @classmethod
    def from_scaled(cls, curve: CurveParametrization, y0_star: float, m: int | None = None, trim: float = 1e-15) -> SectionCurve:
        """Map a scaled-coordinate curve to ``(t0, y0)`` and resample it as a graph over ``t0``."""
        m = m or 4 * max(curve.order, 16)
        t = grid(m)
        theta = t.copy()
        for _ in range(50):
            g = theta + curve.phi_part(theta) - t
            dg = 1.0 + curve.phi_part.derivative()(theta)
            theta -= g / dg
            if np.max(np.abs(g)) < 1e-15:
                break
        y = dyn.velocity_from_action(curve.I_part(theta), y0_star)
        f = PeriodicFn.from_samples(y, (m - 1) // 2)
        c = np.abs(f.coeffs)
        keep = np.flatnonzero(c > trim * max(c[0], 1.0))
        return cls(f.resize(int(keep.max()) if keep.size else 0))

    def __call__(self, t):
        return self.y_of_t(t)

    @property
    def y_range(self) -> tuple[float, float]:
        s = self.y_of_t.samples(max(4 * self.y_of_t.order, 64))
        return float(s.min()), float(s.max())


@dataclass
class TrialRecord:
    index: int
    t0: float
    y0: float
    impacts: int
    y_min: float
    y_max: float
    frac_min: float
    frac_max: float
    breached: bool
    escaped: str = ""


@dataclass
class ConfinementReport:
    inner: SectionCurve
    outer: SectionCurve
    eps: float
    seed: int
    n_impacts: int
    trials: list[TrialRecord] = field(default_factory=list)

    @property
    def n_breached(self) -> int:
        return sum(t.breached for t in self.trials)

    @property
    def n_escaped(self) -> int:
        return sum(bool(t.escaped) for t in self.trials)

    @property
    def confined(self) -> bool:
        return self.n_breached == 0 and self.n_escaped == 0

    def summary(self) -> dict:
        return {
            "eps": self.eps,
            "seed": self.seed,
            "n_trials": len(self.trials),
            "n_impacts": self.n_impacts,
            "n_breached": self.n_breached,
            "n_escaped": self.n_escaped,
            "confined": self.confined,
        }

    def trial_rows(self) -> list[dict]:
        return [asdict(t) for t in self.trials]


def sample_band(inner: SectionCurve, outer: SectionCurve, n: int, seed: int):
    """Uniform draws in (angle, band fraction) strictly inside the band."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, TWO_PI, n)
    frac = rng.uniform(0.0, 1.0, n)
    frac = np.clip(frac, 1e-9, 1.0 - 1e-9)
    lo, hi = inner(t), outer(t)
    if np.any(hi <= lo):
        raise ValueError("inner and outer curves are not ordered at every sampled angle")
    return t, lo + frac * (hi - lo)


def _band_fraction(inner, outer, t, y):
    lo, hi = inner(t), outer(t)
    return (y - lo) / (hi - lo)


def _step_safe(t, y, eps, forcing):
    """One impact-map step; points failing individually are flagged instead of aborting the batch."""
    try:
        t1, y1 = dyn._impact_step(1, t, y, eps, forcing)
        return (*dyn._impact_step(-1, t1, y1, eps, forcing), None)
    except ImpactKamError:
        pass
    tn, yn = np.empty_like(t), np.empty_like(y)
    failed = {}
    for i in range(t.size):
        try:
            a, b = dyn._impact_step(1, t[i : i + 1], y[i : i + 1], eps, forcing)
            a, b = dyn._impact_step(-1, a, b, eps, forcing)
            tn[i], yn[i] = a[0], b[0]
        except ImpactKamError as exc:
            tn[i], yn[i] = t[i], y[i]
            failed[i] = str(exc)
    return tn, yn, failed


def _run_trials(args):
    inner, outer, idx, t0, y0, n_impacts, eps, forcing, chunk = args
    n = t0.size
    t, y = t0.copy(), y0.copy()
    active = np.ones(n, dtype=bool)
    impacts = np.zeros(n, dtype=int)
    ymin, ymax = y0.copy(), y0.copy()
    f0 = _band_fraction(inner, outer, t0, y0)
    fmin, fmax = f0.copy(), f0.copy()
    breached = np.zeros(n, dtype=bool)
    escaped = [""] * n
    done = 0
    while done < n_impacts and active.any():
        for _ in range(min(chunk, n_impacts - done)):
            ids = np.flatnonzero(active)
            if ids.size == 0:
                break
            tn, yn, failed = _step_safe(t[ids], y[ids], eps, forcing)
            if failed:
                for j, msg in failed.items():
                    escaped[ids[j]] = msg
                    active[ids[j]] = False
            ok = np.array([j not in (failed or {}) for j in range(ids.size)])
            ids, tn, yn = ids[ok], tn[ok], yn[ok]
            t[ids], y[ids] = tn, yn
            impacts[ids] += 1
            fr = _band_fraction(inner, outer, tn, yn)
            ymin[ids] = np.minimum(ymin[ids], yn)
            ymax[ids] = np.maximum(ymax[ids], yn)
            fmin[ids] = np.minimum(fmin[ids], fr)
            fmax[ids] = np.maximum(fmax[ids], fr)
            out = ~((fr > 0.0) & (fr < 1.0))
            if out.any():
                breached[ids[out]] = True
                active[ids[out]] = False
        done += chunk
    return [
        TrialRecord(
            int(idx[i]), float(t0[i]), float(y0[i]), int(impacts[i]), float(ymin[i]), float(ymax[i]),
            float(fmin[i]), float(fmax[i]), bool(breached[i]), escaped[i],
        )
        for i in range(n)
    ]


def confinement_run(
    inner: SectionCurve,
    outer: SectionCurve,
    n_trials: int,
    n_impacts: int,
    eps: float,
    forcing: ForcingSpec,
    seed: int = 0,
    workers: int = 1,
    chunk: int = 10_000,
    progress: Callable[[int, int], None] | None = None,
) -> ConfinementReport:
    """Iterate the impact map from seeded points between two section curves and record band exits.

    A trial is breached as soon as an iterate leaves the open band
    ``inner(t) < y < outer(t)`` at its own angle. Trials run vectorized;
    with ``workers > 1`` they are split across processes.
    """
    if n_trials < 1 or n_impacts < 0:
        raise ValueError("need n_trials >= 1 and n_impacts >= 0")
    dyn._check_eps(eps, forcing)
    t0, y0 = sample_band(inner, outer, n_trials, seed)
    idx = np.arange(n_trials)
    parts = np.array_split(idx, max(1, min(workers, n_trials)))
    jobs = [(inner, outer, p, t0[p], y0[p], n_impacts, eps, forcing, chunk) for p in parts if p.size]
    records: list[TrialRecord] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for k, recs in enumerate(pool.map(_run_trials, jobs)):
                records.extend(recs)
                if progress:
                    progress(k + 1, len(jobs))
    else:
        for k, job in enumerate(jobs):
            records.extend(_run_trials(job))
            if progress:
                progress(k + 1, len(jobs))
    records.sort(key=lambda r: r.index)
    return ConfinementReport(inner, outer, eps, seed, n_impacts, records)


def check_curve_invariance(curve: SectionCurve, eps: float, forcing: ForcingSpec, m: int = 256) -> float:
    """Sup of ``|ȳ - Y(t̄)|`` for points of a section curve pushed through the impact map."""
    t = grid(m)
    out = dyn.impact_map(t, curve(t), eps, forcing)
    return float(np.max(np.abs(out.y_bar - curve(out.t_bar))))


# ---------------------------------------------------------------------------
# Audit table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditRow:
    check: str
    measured: float
    threshold: float
    passed: bool
    note: str = ""


def run_audit(
    eps: float,
    forcing: ForcingSpec,
    y_values=(10.0, 20.0, 40.0, 80.0),
    tau_y_grid=tuple(np.linspace(6.0, 80.0, 20)),
    n_t: int = 32,
    E0_const: float = -50.0,
    n_quad: int = 512,
) -> list[AuditRow]:
    """Symplecticity, exactness, impact-time and perturbation-size checks with their thresholds."""
    t_grid = grid(n_t)
    rows = []
    det_e = check_symplectic("energy", (t_grid, np.linspace(8.0, 16.0, 9)), eps, forcing)
    rows.append(AuditRow("det_energy_map", det_e, 1e-8, det_e < 1e-8))
    ex_e = check_exactness("energy", E0_const, eps, forcing, n_quad)
    rows.append(AuditRow("exactness_energy_form", ex_e, 1e-8, ex_e < 1e-8))
    ex_y = check_exactness("impact", E0_const, eps, forcing, n_quad)
    if eps > 0:
        contrast = ex_y / max(ex_e, 1e-300)
        rows.append(AuditRow("exactness_contrast", contrast, 1e3, contrast >= 1e3, "y dt loop over E dt loop"))
    else:
        rows.append(AuditRow("exactness_velocity_form", ex_y, 1e-12, ex_y < 1e-12, "unperturbed: both loops vanish"))
    tau = check_tau_star_bounds(eps, forcing, tau_y_grid, t_grid)
    rows.append(AuditRow("tau_star_ratio", tau.worst_ratio, 1.0, tau.worst_ratio < 1.0))
    if eps > 0:
        ok = abs(tau.decay_exponent + 1.0) <= 0.2
        rows.append(AuditRow("tau_star_decay_exponent", tau.decay_exponent, -1.0, ok, "tolerance 0.2"))
        sizes = perturbation_sizes(eps, forcing, y_values, t_grid)
        rows.append(AuditRow("f_parts_spread", sizes.f_spread, 2.0, sizes.f_spread < 2.0))
        halving = sizes.derivative_halving
        worst = max(abs(h - 0.5) for h in halving)
        rows.append(AuditRow("dy_f_t0_halving", worst, 0.15, worst <= 0.15, "max |ratio - 0.5|"))
    return rows
