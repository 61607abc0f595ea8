"""Euler-Maruyama path simulation, the noise-free skeleton, and ensembles.

Paths are simulated in batches, but each path only ever touches its own row
and its own noise stream (see :mod:`sdeasym.rng`), so a path's trajectory does
not depend on which batch it ran in, on the batch size, or on thread count.
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import rng
from .core_model import SdeSystem, frobenius_sq, matvec, norm, polar_coefficients

log = logging.getLogger(__name__)

R_FLOOR = 1e-3
_DELTA = 1e-12
_LAND_RTOL = 1e-12


class SimulationError(RuntimeError):
    """Fatal path failure (non-finite state); carries the offending path index."""

    def __init__(self, message: str, path_index: int | None = None):
        super().__init__(message if path_index is None else f"path {path_index}: {message}")
        self.path_index = path_index


# -- schedules ----------------------------------------------------------------

def default_checkpoints(t_end: float, dt_max: float, count: int = 64) -> np.ndarray:
    start = max(dt_max, 1e-2)
    if start >= t_end:
        return np.array([float(t_end)])
    times = np.geomspace(start, t_end, count)
    times[-1] = t_end
    return times


def dyadic_times(t_end: float, levels: int) -> np.ndarray:
    """``t_end / 2**k`` for ``k = 0..levels``, ascending."""
    return np.array([t_end / 2.0**k for k in range(levels, -1, -1)])


@dataclass(frozen=True)
class StepSchedule:
    """Adaptive step control and the times at which states are recorded.

    The step is ``clamp(relative_scale * tau, dt_min, dt_max)`` where ``tau`` is
    the local time for the state to move by a fraction of its own radius.  When
    ``checkpoint_times`` is empty, 64 log-spaced times are used; ``extra_times``
    are merged in either way.
    """

    t_end: float
    dt_max: float
    dt_min: float = 1e-9
    relative_scale: float = 0.01
    checkpoint_times: tuple = ()
    extra_times: tuple = ()

    def __post_init__(self):
        if not (self.t_end > 0 and self.dt_max > 0 and self.dt_min > 0):
            raise ValueError("t_end, dt_max and dt_min must be positive")
        if self.dt_min > self.dt_max:
            raise ValueError("dt_min must not exceed dt_max")
        if not (0 < self.relative_scale <= 1):
            raise ValueError("relative_scale must lie in (0, 1]")
        if len(self.checkpoint_times):
            times = np.asarray(self.checkpoint_times, dtype=float)
        else:
            times = default_checkpoints(self.t_end, self.dt_max)
        if len(self.extra_times):
            times = np.union1d(times, np.asarray(self.extra_times, dtype=float))
        if np.any(np.diff(times) <= 0):
            raise ValueError("checkpoint_times must be strictly increasing")
        if times[0] < 0 or times[-1] > self.t_end:
            raise ValueError("checkpoint_times must lie in [0, t_end]")
        object.__setattr__(self, "checkpoint_times", tuple(float(t) for t in times))
        object.__setattr__(self, "extra_times", ())

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.checkpoint_times)


# -- trajectories -------------------------------------------------------------

@dataclass
class Trajectory:
    """One path sampled at checkpoint times.

    Cartesian states are rows ``x1..xn``; polar states are rows ``r, phi1..phin``.
    """

    representation: str
    times: np.ndarray
    states: np.ndarray
    floor_events: list = field(default_factory=list)
    seed: int = 0
    path_index: int = 0

    @property
    def floor_hit(self) -> bool:
        return bool(self.floor_events)

    def radius(self) -> np.ndarray:
        if self.representation == "polar":
            return self.states[:, 0].copy()
        return norm(self.states)

    def angle(self) -> np.ndarray:
        if self.representation == "polar":
            return self.states[:, 1:].copy()
        return self.states / norm(self.states)[:, None]

    def state_at(self, t: float) -> np.ndarray:
        hits = np.flatnonzero(self.times == t)
        if not len(hits):
            raise KeyError(f"no checkpoint at t={t!r}")
        return self.states[hits[0]]

    def columns(self) -> list[str]:
        n = self.states.shape[1]
        if self.representation == "polar":
            return ["t", "r"] + [f"phi{i}" for i in range(1, n)]
        return ["t"] + [f"x{i}" for i in range(1, n + 1)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns())
        for t, row in zip(self.times, self.states):
            writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
        return buf.getvalue()

    def equals(self, other: "Trajectory") -> bool:
        """Bit-for-bit comparison."""
        return (
            self.representation == other.representation
            and self.seed == other.seed
            and self.path_index == other.path_index
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.states, other.states)
            and self.floor_events == other.floor_events
        )


def read_trajectory_csv(text: str, seed: int = 0, path_index: int = 0) -> Trajectory:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    representation = "polar" if header[1] == "r" else "cartesian"
    return Trajectory(representation, body[:, 0], body[:, 1:], [], seed, path_index)


# -- batch simulation ---------------------------------------------------------

class _Recorder:
    """Bookkeeping of checkpoints, floor events and activity for a batch."""

    def __init__(self, times: np.ndarray, n_paths: int, width: int):
        self.times = times
        self.out = np.full((n_paths, len(times), width), np.nan)
        self.next_cp = np.zeros(n_paths, dtype=np.int64)
        self.active = np.ones(n_paths, dtype=bool)
        self.floor_time = np.full(n_paths, np.nan)

    def record(self, rows: np.ndarray, states: np.ndarray):
        cp = self.next_cp[rows]
        self.out[rows, cp] = states
        self.next_cp[rows] = cp + 1
        self.active[rows[cp + 1 >= len(self.times)]] = False

    def freeze(self, rows: np.ndarray, t: np.ndarray, states: np.ndarray):
        self.floor_time[rows] = t
        for row, state in zip(rows, states):
            self.out[row, self.next_cp[row]:] = state
        self.next_cp[rows] = len(self.times)
        self.active[rows] = False

    def record_initial(self, state_row: np.ndarray):
        while self.next_cp[0] < len(self.times) and self.times[self.next_cp[0]] <= 0.0:
            self.out[:, self.next_cp[0]] = state_row
            self.next_cp[:] += 1
        if self.next_cp[0] >= len(self.times):
            self.active[:] = False


def _step_sizes(sched: StepSchedule, tau: np.ndarray, t: np.ndarray, target: np.ndarray):
    dt = np.clip(sched.relative_scale * tau, sched.dt_min, sched.dt_max)
    remaining = target - t
    land = dt >= remaining * (1.0 - _LAND_RTOL)
    return np.where(land, remaining, dt), land


def _as_paths(path_indices) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(path_indices, dtype=np.int64))
    if np.any(idx < 0):
        raise ValueError("path indices must be non-negative")
    return idx


def _check_finite(values: np.ndarray, paths: np.ndarray, rows: np.ndarray, what: str):
    bad = ~np.all(np.isfinite(values.reshape(len(rows), -1)), axis=1)
    if np.any(bad):
        raise SimulationError(f"non-finite {what}", int(paths[rows[np.argmax(bad)]]))


def simulate_cartesian_batch(
    sys: SdeSystem,
    x0,
    sched: StepSchedule,
    seed: int,
    path_indices: Iterable[int],
    r_floor: float = R_FLOOR,
) -> list[Trajectory]:
    """Euler-Maruyama paths of ``dX = a dt + b dW`` for several path indices."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.dim_state,):
        raise ValueError(f"x0 must have length {sys.dim_state}")
    if not norm(x0) > 0:
        raise ValueError("x0 must be nonzero")
    paths = _as_paths(path_indices)
    P, m = len(paths), sys.dim_noise
    keys = rng.path_keys(seed, paths)
    times = sched.times
    rec = _Recorder(times, P, sys.dim_state)
    X = np.tile(x0, (P, 1))
    t = np.zeros(P)
    step = np.zeros(P, dtype=np.int64)

    rec.record_initial(x0)
    if norm(x0) < r_floor:
        rec.freeze(np.arange(P), np.zeros(P), X)

    while True:
        rows = np.flatnonzero(rec.active)
        if not len(rows):
            break
        x = X[rows]
        a = sys.drift_at(x)
        B = sys.diffusion_at(x)
        _check_finite(a, paths, rows, "drift")
        _check_finite(B, paths, rows, "diffusion")
        r = norm(x)
        tau = np.minimum(r / (norm(a) + _DELTA), r * r / (frobenius_sq(B) + _DELTA))
        target = times[rec.next_cp[rows]]
        dt, land = _step_sizes(sched, tau, t[rows], target)
        dW = rng.normals(keys[rows], step[rows], m) * np.sqrt(dt)[:, None]
        x_new = x + a * dt[:, None] + matvec(B, dW)
        t_new = np.where(land, target, t[rows] + dt)
        _check_finite(x_new, paths, rows, "state")
        X[rows] = x_new
        t[rows] = t_new
        step[rows] += 1

        hit = norm(x_new) < r_floor
        if np.any(hit):
            rec.freeze(rows[hit], t_new[hit], x_new[hit])
        keep = land & ~hit
        if np.any(keep):
            rec.record(rows[keep], x_new[keep])

    return [
        Trajectory(
            "cartesian",
            times.copy(),
            rec.out[i],
            [] if np.isnan(rec.floor_time[i]) else [float(rec.floor_time[i])],
            int(seed),
            int(paths[i]),
        )
        for i in range(P)
    ]


def simulate_cartesian(sys, x0, sched, seed: int, path_index: int = 0, r_floor: float = R_FLOOR) -> Trajectory:
    return simulate_cartesian_batch(sys, x0, sched, seed, [path_index], r_floor)[0]


def simulate_polar_batch(
    sys: SdeSystem,
    r0: float,
    phi0,
    sched: StepSchedule,
    seed: int,
    path_indices: Iterable[int],
    r_floor: float = R_FLOOR,
) -> list[Trajectory]:
    """Euler-Maruyama paths of the radius/angle system built from ``sys``.

    The radius is driven by its own scalar noise, independent of the angle
    noise, so only the law of each marginal is reproduced (not the pathwise
    coupling).  The angle is projected back onto the unit sphere after every
    step.
    """
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    n, m = sys.dim_state, sys.dim_noise
    phi0 = np.asarray(phi0, dtype=float)
    if phi0.shape != (n,):
        raise ValueError(f"phi0 must have length {n}")
    phi0 = phi0 / norm(phi0)
    paths = _as_paths(path_indices)
    P = len(paths)
    keys = rng.path_keys(seed, paths)
    times = sched.times
    rec = _Recorder(times, P, n + 1)
    R = np.full(P, float(r0))
    Phi = np.tile(phi0, (P, 1))
    t = np.zeros(P)
    step = np.zeros(P, dtype=np.int64)

    rec.record_initial(np.concatenate([[r0], phi0]))
    if r0 < r_floor:
        rec.freeze(np.arange(P), np.zeros(P), np.column_stack([R, Phi]))

    while True:
        rows = np.flatnonzero(rec.active)
        if not len(rows):
            break
        r, phi = R[rows], Phi[rows]
        c = polar_coefficients(sys, r, phi)
        for what, v in (("mu", c.mu), ("sigma", c.sigma), ("nu", c.nu), ("chi", c.chi)):
            _check_finite(v, paths, rows, what)
        tau = np.minimum(
            r / (np.abs(c.mu) + r * norm(c.nu) + _DELTA),
            r * r / (c.sigma * c.sigma + r * r * frobenius_sq(c.chi) + _DELTA),
        )
        target = times[rec.next_cp[rows]]
        dt, land = _step_sizes(sched, tau, t[rows], target)
        sqdt = np.sqrt(dt)
        z = rng.normals(keys[rows], step[rows], m + 1)
        r_new = r + c.mu * dt + c.sigma * sqdt * z[:, m]
        phi_new = phi + c.nu * dt[:, None] + matvec(c.chi, z[:, :m] * sqdt[:, None])
        phi_new = phi_new / norm(phi_new)[:, None]
        t_new = np.where(land, target, t[rows] + dt)
        _check_finite(r_new, paths, rows, "radius")
        _check_finite(phi_new, paths, rows, "angle")
        R[rows] = r_new
        Phi[rows] = phi_new
        t[rows] = t_new
        step[rows] += 1

        hit = r_new < r_floor
        if np.any(hit):
            frozen = np.column_stack([np.maximum(r_new[hit], 0.0), phi_new[hit]])
            rec.freeze(rows[hit], t_new[hit], frozen)
        keep = land & ~hit
        if np.any(keep):
            rec.record(rows[keep], np.column_stack([r_new[keep], phi_new[keep]]))

    return [
        Trajectory(
            "polar",
            times.copy(),
            rec.out[i],
            [] if np.isnan(rec.floor_time[i]) else [float(rec.floor_time[i])],
            int(seed),
            int(paths[i]),
        )
        for i in range(P)
    ]


def simulate_polar(sys, r0, phi0, sched, seed: int, path_index: int = 0, r_floor: float = R_FLOOR) -> Trajectory:
    return simulate_polar_batch(sys, r0, phi0, sched, seed, [path_index], r_floor)[0]


def simulate_ode_skeleton(sys: SdeSystem, x0, sched: StepSchedule, rtol: float = 1e-10) -> Trajectory:
    """Noise-free skeleton ``dx = a(x) dt`` by scipy's DOP853, reported at the
    schedule's checkpoints with steps capped at ``dt_max``."""
    x0 = np.asarray(x0, dtype=float)
    times = sched.times
    sol = solve_ivp(lambda t, y: sys.drift_at(y), (0.0, float(times[-1])), x0, method="DOP853",
                    t_eval=times, rtol=rtol, atol=rtol * 1e-3, max_step=sched.dt_max)
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        raise SimulationError(f"ODE skeleton failed: {sol.message}")
    return Trajectory("cartesian", times.copy(), sol.y.T.copy(), [], 0, 0)


# -- ensembles ----------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleSummary:
    n_paths: int
    transience_fraction: float
    floor_hit_fraction: float
    exponent_fit: tuple | None
    angle_increment_medians: list
    terminal_radius_samples: list
    transience_threshold: float
    excluded_paths: int

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "transience_fraction": self.transience_fraction,
            "floor_hit_fraction": self.floor_hit_fraction,
            "transience_threshold": self.transience_threshold,
            "excluded_paths": self.excluded_paths,
            "exponent_fit": None
            if self.exponent_fit is None
            else dict(zip(("slope", "intercept", "stderr"), self.exponent_fit)),
            "angle_increment_medians": [list(p) for p in self.angle_increment_medians],
            "terminal_radius_samples": list(self.terminal_radius_samples),
        }


@dataclass(frozen=True)
class Ensemble:
    """Trajectories keyed by path index; merging is a set union."""

    trajectories: tuple
    r0: float
    transience_threshold: float

    @property
    def t_end(self) -> float:
        return float(self.trajectories[0].times[-1])

    def merge(self, other: "Ensemble") -> "Ensemble":
        return merge_ensembles([self, other])

    @property
    def summary(self) -> EnsembleSummary:
        return summarize(self)


def merge_ensembles(parts: Sequence[Ensemble]) -> Ensemble:
    by_index: dict[int, Trajectory] = {}
    for part in parts:
        for tr in part.trajectories:
            prev = by_index.get(tr.path_index)
            if prev is not None and not prev.equals(tr):
                raise ValueError(f"conflicting trajectories for path {tr.path_index}")
            by_index[tr.path_index] = tr
    thresholds = {p.transience_threshold for p in parts}
    if len(thresholds) != 1:
        raise ValueError("cannot merge ensembles with different transience thresholds")
    ordered = tuple(by_index[i] for i in sorted(by_index))
    return Ensemble(ordered, parts[0].r0, thresholds.pop())


def summarize(ens: Ensemble) -> EnsembleSummary:
    from . import asymptotics

    trs = ens.trajectories
    t_end = ens.t_end
    terminal = np.array([tr.radius()[-1] for tr in trs])
    floor = np.array([tr.floor_hit for tr in trs])
    transient = (terminal > ens.transience_threshold) & ~floor

    fit = None
    try:
        res = asymptotics.fit_power_law(trs, (t_end / 100.0, t_end))
        fit = (res.exponent, float(np.log(res.prefactor)), res.exponent_stderr)
    except asymptotics.EstimatorError:
        pass
    medians = []
    try:
        medians = [tuple(p) for p in asymptotics.angle_stabilization_diagnostics(trs).medians]
    except asymptotics.EstimatorError:
        pass
    return EnsembleSummary(
        n_paths=len(trs),
        transience_fraction=float(np.mean(transient)),
        floor_hit_fraction=float(np.mean(floor)),
        exponent_fit=fit,
        angle_increment_medians=medians,
        terminal_radius_samples=[float(v) for v in terminal],
        transience_threshold=float(ens.transience_threshold),
        excluded_paths=int(floor.sum()),
    )


def _chunks(n_paths: int, chunk_size: int) -> list[np.ndarray]:
    return [np.arange(i, min(i + chunk_size, n_paths)) for i in range(0, n_paths, chunk_size)]


def run_ensemble(
    scenario,
    n_paths: int,
    sched: StepSchedule,
    base_seed: int,
    representation: str = "cartesian",
    threads: int | None = 1,
    chunk_size: int = 64,
    r_floor: float = R_FLOOR,
    transience_threshold: float | None = None,
) -> Ensemble:
    """Simulate ``n_paths`` independent paths of ``scenario`` (anything with
    ``.system`` and ``.x0``), in fixed-size chunks spread over ``threads``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if representation not in ("cartesian", "polar"):
        raise ValueError(f"unknown representation {representation!r}")
    sys = scenario.system
    x0 = np.asarray(scenario.x0, dtype=float)
    r0 = float(norm(x0))
    threshold = 10.0 * r0 if transience_threshold is None else float(transience_threshold)

    def run(chunk):
        if representation == "cartesian":
            return simulate_cartesian_batch(sys, x0, sched, base_seed, chunk, r_floor)
        return simulate_polar_batch(sys, r0, x0 / r0, sched, base_seed, chunk, r_floor)

    chunks = _chunks(n_paths, chunk_size)
    if threads is None or threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    parts = [Ensemble(tuple(r), r0, threshold) for r in results]
    return merge_ensembles(parts)
