"""Estimators for long-time behaviour of simulated radius/angle paths.

Almost-sure limits are turned into finite-window statistics: log-log slopes
over the last decades, medians of angle increments between dyadic times,
tail suprema of Ito integrals.  Every estimator drops paths that hit the
radial floor and says how many it dropped.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import rng
from .core_model import norm
from .integrator import Trajectory


class EstimatorError(ValueError):
    """An estimator could not produce a statistic (missing data, all paths excluded)."""


# -- closed-form asymptotics --------------------------------------------------

def _unit_constant(phi) -> float:
    return 1.0


@dataclass(frozen=True)
class PowerLawModel:
    """Radial drift ``mu(r, phi) ~ M(phi) r**alpha`` for large ``r``."""

    alpha: float
    M: Callable = _unit_constant
    label: str = ""

    def __post_init__(self):
        if not (-1.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (-1, 1), got {self.alpha}")

    @property
    def exponent(self) -> float:
        return 1.0 / (1.0 - self.alpha)

    def prefactor(self, phi_inf=None) -> float:
        return ((1.0 - self.alpha) * self.M(phi_inf)) ** self.exponent


def predicted_radius(model: PowerLawModel, phi_inf, t):
    """``((1 - alpha) M(phi_inf) t) ** (1 / (1 - alpha))``."""
    if not (-1.0 < model.alpha < 1.0):
        raise ValueError(f"alpha must lie in (-1, 1), got {model.alpha}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    M = model.M(phi_inf)
    if not M > 0:
        raise ValueError("M(phi) must be positive")
    return ((1.0 - model.alpha) * M * t) ** (1.0 / (1.0 - model.alpha))


# -- power-law fits -----------------------------------------------------------

@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    exponent_stderr: float
    exponent_iqr: tuple
    prefactor_iqr: tuple
    n_used: int
    excluded_paths: int
    per_path: tuple = field(repr=False, default=())


def _as_list(traj) -> list[Trajectory]:
    if isinstance(traj, Trajectory):
        return [traj]
    if hasattr(traj, "trajectories"):
        return list(traj.trajectories)
    return list(traj)


def _split_excluded(trs: list[Trajectory]) -> tuple[list[Trajectory], int]:
    kept = [tr for tr in trs if not tr.floor_hit]
    return kept, len(trs) - len(kept)


def _window_mask(times: np.ndarray, window) -> np.ndarray:
    lo, hi = window
    return (times >= lo * (1 - 1e-12)) & (times <= hi * (1 + 1e-12)) & (times > 0)


def fit_power_law(traj, t_window, min_points: int = 8) -> PowerLawFit:
    """Least-squares line through ``(ln t, ln R(t))`` inside ``t_window``.

    For several paths each path is fitted separately; the reported exponent
    and prefactor are medians over paths, and the stderr is that of the median.
    """
    trs, excluded = _split_excluded(_as_list(traj))
    if not trs:
        raise EstimatorError("fit_power_law: all paths excluded (floor hits)")
    fits = []
    for tr in trs:
        mask = _window_mask(tr.times, t_window)
        if mask.sum() < min_points:
            raise EstimatorError(
                f"fit_power_law: {int(mask.sum())} checkpoints in window {tuple(t_window)}, need {min_points}"
            )
        r = tr.radius()[mask]
        if np.any(r <= 0):
            raise EstimatorError("fit_power_law: non-positive radius in window")
        res = stats.linregress(np.log(tr.times[mask]), np.log(r))
        fits.append((float(res.slope), float(np.exp(res.intercept)), float(res.stderr)))
    arr = np.array(fits)
    slopes, prefs = arr[:, 0], arr[:, 1]
    q = lambda v: tuple(float(x) for x in np.percentile(v, [25, 75]))
    if len(arr) == 1:
        stderr = float(arr[0, 2])
    else:
        iqr = np.subtract(*np.percentile(slopes, [75, 25]))
        stderr = float(1.2533 * (iqr / 1.349) / np.sqrt(len(arr)))
    return PowerLawFit(
        exponent=float(np.median(slopes)),
        prefactor=float(np.median(prefs)),
        exponent_stderr=stderr,
        exponent_iqr=q(slopes),
        prefactor_iqr=q(prefs),
        n_used=len(arr),
        excluded_paths=excluded,
        per_path=tuple(fits),
    )


# -- angle stabilization ------------------------------------------------------

@dataclass(frozen=True)
class AngleStabilizationSpec:
    """Decay rates of the angle coefficients: ``|nu| <= nu_star / r**delta1``,
    ``|chi| <= chi_star / r**delta2``, with ``R(t)`` growing at least like
    ``t**gamma``.
    """

    gamma: float
    delta1: float
    delta2: float
    nu_star: float = 1.0
    chi_star: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "delta1", "delta2", "nu_star", "chi_star"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class AngleConditionReport:
    holds: bool
    drift_margin: float
    diffusion_margin: float

    def __bool__(self):
        return self.holds


def check_angle_conditions(spec: AngleStabilizationSpec) -> AngleConditionReport:
    """True iff ``delta1 > 1/gamma`` and ``delta2 > 1/(2 gamma)``."""
    m1 = spec.delta1 - 1.0 / spec.gamma
    m2 = spec.delta2 - 1.0 / (2.0 * spec.gamma)
    return AngleConditionReport(bool(m1 > 0 and m2 > 0), float(m1), float(m2))


@dataclass(frozen=True)
class AngleDiagnostics:
    medians: list
    excluded_paths: int
    n_used: int


def _dyadic_candidates(times: np.ndarray) -> list[float]:
    present = set(times.tolist())
    found = []
    T = float(times[-1])
    while T / 2.0 in present and T in present:
        found.append(T)
        T = T / 2.0
    return sorted(found)


def angle_stabilization_diagnostics(ensemble, T_values: Sequence[float] | None = None) -> AngleDiagnostics:
    """Median over paths of ``|Phi(T) - Phi(T/2)|`` for dyadic ``T``."""
    trs, excluded = _split_excluded(_as_list(ensemble))
    if not trs:
        raise EstimatorError("angle_stabilization_diagnostics: all paths excluded (floor hits)")
    times = trs[0].times
    if T_values is None:
        T_values = _dyadic_candidates(times)
        if len(T_values) < 3:
            raise EstimatorError(
                "angle_stabilization_diagnostics: missing checkpoint, need T and T/2 for >= 3 dyadic T"
            )
    present = set(times.tolist())
    for T in T_values:
        if T not in present or T / 2.0 not in present:
            raise EstimatorError(f"angle_stabilization_diagnostics: missing checkpoint for T={T!r}")
    out = []
    for T in sorted(T_values):
        i_T = int(np.flatnonzero(times == T)[0])
        i_h = int(np.flatnonzero(times == T / 2.0)[0])
        incs = [float(norm(tr.angle()[i_T] - tr.angle()[i_h])) for tr in trs]
        out.append((float(T), float(np.median(incs))))
    return AngleDiagnostics(out, excluded, len(trs))


# -- Ito integral decay -------------------------------------------------------

@dataclass(frozen=True)
class ItoDecayReport:
    gamma: float
    beta: float
    condition_holds: bool
    windows: list
    percentile_95: list
    per_path_sup: np.ndarray = field(repr=False)
    contrast_gamma: float | None = None
    contrast_percentile_95: list | None = None

    def statistic(self, window) -> float:
        for w, p in zip(self.windows, self.percentile_95):
            if tuple(w) == tuple(window):
                return p
        raise KeyError(window)


def default_ito_grid(t_max: float = 1e4, points: int = 20001) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(1e-2, t_max, points)])


def _ito_sups(b_fn, gammas, n_paths, grid, windows, seed):
    keys = rng.path_keys(seed, np.arange(n_paths))
    M = np.zeros(n_paths)
    sups = np.zeros((len(gammas), len(windows), n_paths))
    for k in range(len(grid) - 1):
        t0, t1 = grid[k], grid[k + 1]
        z = rng.normals(keys, k, 1)[:, 0]
        M = M + float(b_fn(t0)) * np.sqrt(t1 - t0) * z
        for w, (lo, hi) in enumerate(windows):
            if lo <= t1 <= hi:
                for g, gamma in enumerate(gammas):
                    np.maximum(sups[g, w], np.abs(M) / t1**gamma, out=sups[g, w])
    return sups


def ito_integral_decay(
    b_fn: Callable[[float], float],
    beta: float,
    gamma: float,
    n_paths: int = 1000,
    t_grid=None,
    windows=None,
    seed: int = 0,
    contrast_gamma: float | None = None,
) -> ItoDecayReport:
    """Tail suprema of ``|int_0^t b dB| / t**gamma`` over decade windows.

    ``M(t)`` is built by Euler sums on ``t_grid`` (log-spaced to 1e4 by
    default).  For each window the per-path supremum over grid points in the
    window is taken, and the ensemble 95th percentile is reported.  A contrast
    exponent ``gamma' < beta + 1/2`` (default ``beta + 1/4``) is run on the same
    noise for comparison only.
    """
    grid = default_ito_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    if windows is None:
        t_max = grid[-1]
        windows = [(t_max / 10 ** (k + 1), t_max / 10**k) for k in (1, 0)]
    windows = [tuple(map(float, w)) for w in windows]
    if contrast_gamma is None:
        contrast_gamma = beta + 0.25
    sups = _ito_sups(b_fn, [gamma, contrast_gamma], n_paths, grid, windows, seed)
    p95 = [float(np.percentile(sups[0, w], 95)) for w in range(len(windows))]
    c95 = [float(np.percentile(sups[1, w], 95)) for w in range(len(windows))]
    return ItoDecayReport(
        gamma=float(gamma),
        beta=float(beta),
        condition_holds=bool(gamma > beta + 0.5),
        windows=windows,
        percentile_95=p95,
        per_path_sup=sups[0, -1].copy(),
        contrast_gamma=float(contrast_gamma),
        contrast_percentile_95=c95,
    )


# -- SDE vs ODE ---------------------------------------------------------------

@dataclass(frozen=True)
class EquivalenceReport:
    times: np.ndarray
    ratios: np.ndarray
    last_decade_median: float
    deviation: float
    excluded_paths: int


def sde_ode_equivalence(sde, ode_traj: Trajectory, t_window=None) -> EquivalenceReport:
    """Ratio of the SDE radius to the ODE radius at shared checkpoints.

    With several SDE paths the ratio at each checkpoint is the median over
    paths.  The summary is the median ratio over the last decade of the
    window (default: the whole checkpoint range).
    """
    trs, excluded = _split_excluded(_as_list(sde))
    if not trs:
        raise EstimatorError("sde_ode_equivalence: all paths excluded (floor hits)")
    times = trs[0].times
    if not np.array_equal(times, ode_traj.times):
        raise EstimatorError("sde_ode_equivalence: SDE and ODE checkpoint grids differ")
    ode_r = ode_traj.radius()
    if np.any(ode_r == 0):
        t_bad = float(times[np.argmax(ode_r == 0)])
        raise EstimatorError(f"sde_ode_equivalence: ODE radius is zero at t={t_bad:.6g}")
    if t_window is None:
        t_window = (times[times > 0][0], times[-1])
    mask = _window_mask(times, t_window)
    ratios = np.median(np.stack([tr.radius() for tr in trs]) / ode_r, axis=0)
    hi = t_window[1]
    last = mask & (times >= hi / 10 * (1 - 1e-12))
    if not np.any(last):
        raise EstimatorError("sde_ode_equivalence: no checkpoints in the last decade")
    med = float(np.median(ratios[last]))
    return EquivalenceReport(times[mask], ratios[mask], med, abs(med - 1.0), excluded)


# -- liminf lower bound -------------------------------------------------------

@dataclass(frozen=True)
class LiminfReport:
    threshold: float
    pass_fraction: float
    per_path_min: np.ndarray
    excluded_paths: int


def liminf_lower_bound_check(ensemble, A2: float, alpha: float, window=None, slack: float = 0.8) -> LiminfReport:
    """Fraction of paths with ``min R(t) / t**(1/(1-alpha))`` over the last decade
    at least ``slack * ((1 - alpha) A2) ** (1/(1-alpha))``.
    """
    trs, excluded = _split_excluded(_as_list(ensemble))
    if not trs:
        raise EstimatorError("liminf_lower_bound_check: all paths excluded (floor hits)")
    times = trs[0].times
    if window is None:
        window = (times[-1] / 10.0, times[-1])
    mask = _window_mask(times, window)
    if not np.any(mask):
        raise EstimatorError("liminf_lower_bound_check: no checkpoints in window")
    p = 1.0 / (1.0 - alpha)
    threshold = slack * ((1.0 - alpha) * A2) ** p
    mins = np.array([np.min(tr.radius()[mask] / times[mask] ** p) for tr in trs])
    return LiminfReport(float(threshold), float(np.mean(mins >= threshold)), mins, excluded)
