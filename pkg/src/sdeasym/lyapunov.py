"""Grid-based checks of Lyapunov conditions for the radius process, scale
functions of one-dimensional diffusions, and the interval-exit bounds.

A certificate here is evidence on a finite grid with sampled angles, not a
proof: it reports the worst generator value it saw and where.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import rng
from .core_model import polar_coefficients

MARGIN_TOL = 1e-10
INNER_FLOOR = 1e-6
OUTER_SPAN = 1e4
MAX_REPORTED_VIOLATIONS = 1000


class CertificateError(ValueError):
    """A candidate or certificate is malformed or degenerate."""


class MonotonicityError(CertificateError):
    """The candidate does not have the monotonicity it claims on the grid."""


class QuadratureError(RuntimeError):
    pass


# -- candidates ---------------------------------------------------------------

@dataclass(frozen=True)
class LyapunovCandidate:
    value: Callable
    first_derivative: Callable
    second_derivative: Callable
    monotonicity: str
    label: str = ""

    def __post_init__(self):
        if self.monotonicity not in ("non-decreasing", "decreasing"):
            raise ValueError(f"unknown monotonicity claim {self.monotonicity!r}")

    def derivative_error(self, grid) -> float:
        """Largest relative mismatch between the supplied derivatives and
        central differences (of the value for V', of V' for V'')."""
        r = np.asarray(grid, dtype=float)
        h = 1e-3 * np.abs(r)
        fd1 = (self.value(r + h) - self.value(r - h)) / (2 * h)
        fd2 = (self.first_derivative(r + h) - self.first_derivative(r - h)) / (2 * h)
        d1, d2 = self.first_derivative(r), self.second_derivative(r)
        e1 = np.abs(fd1 - d1) / np.maximum(np.abs(d1), 1e-300)
        e2 = np.abs(fd2 - d2) / np.maximum(np.abs(d2), 1e-300)
        e1 = np.where((d1 == 0) & (np.abs(fd1) < 1e-12), 0.0, e1)
        e2 = np.where((d2 == 0) & (np.abs(fd2) < 1e-12), 0.0, e2)
        return float(max(np.max(e1), np.max(e2)))

    def check_monotone(self, grid) -> None:
        v = self.value(np.asarray(grid, dtype=float))
        dv = np.diff(v)
        if self.monotonicity == "decreasing":
            bad = np.flatnonzero(~(dv < 0))
        else:
            bad = np.flatnonzero(dv < 0)
        if len(bad):
            i = int(bad[0])
            raise MonotonicityError(
                f"{self.label or 'candidate'} is not {self.monotonicity} on [{grid[i]:.6g}, {grid[i + 1]:.6g}]"
            )


def log_candidate() -> LyapunovCandidate:
    return LyapunovCandidate(np.log, lambda r: 1.0 / r, lambda r: -1.0 / r**2, "non-decreasing", "ln r")


def inverse_candidate() -> LyapunovCandidate:
    return LyapunovCandidate(lambda r: 1.0 / r, lambda r: -1.0 / r**2, lambda r: 2.0 / r**3, "decreasing", "1/r")


def negative_power_candidate(p: float) -> LyapunovCandidate:
    """``V(r) = -r**(-p)``, increasing for ``p > 0``."""
    return LyapunovCandidate(
        lambda r: -(r ** (-p)),
        lambda r: p * r ** (-p - 1),
        lambda r: -p * (p + 1) * r ** (-p - 2),
        "non-decreasing",
        f"-r^-{p:g}",
    )


def linear_candidate(slope: float) -> LyapunovCandidate:
    mono = "decreasing" if slope < 0 else "non-decreasing"
    return LyapunovCandidate(
        lambda x: slope * np.asarray(x, dtype=float),
        lambda x: np.full_like(np.asarray(x, dtype=float), slope),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        mono,
        f"{slope:g}*x",
    )


def corollary_exit_function(A: float, B: float) -> LyapunovCandidate:
    """``u(x) = exp(-2 A x / B**2) - x / A``, which solves ``A u' + B**2 u''/2 = -1``."""
    k = 2.0 * A / B**2
    return LyapunovCandidate(
        lambda x: np.exp(-k * x) - x / A,
        lambda x: -k * np.exp(-k * x) - 1.0 / A,
        lambda x: k * k * np.exp(-k * x),
        "decreasing",
        f"exp(-{k:g}x) - x/{A:g}",
    )


# -- generator and certificates ----------------------------------------------

def apply_generator(mu, sigma, V: LyapunovCandidate, r):
    """``mu V'(r) + sigma**2 V''(r) / 2`` for pre-evaluated ``mu``, ``sigma``."""
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise ValueError("r must be positive")
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    # zero coefficients contribute exactly zero even where V' or V'' overflow
    t1 = np.where(mu == 0, 0.0, mu * V.first_derivative(r))
    t2 = np.where(sigma == 0, 0.0, 0.5 * sigma * sigma * V.second_derivative(r))
    out = t1 + t2
    if not np.all(np.isfinite(out)):
        raise ValueError("generator value is not finite")
    return out


@dataclass
class LyapunovCertificate:
    candidate: LyapunovCandidate
    radial_interval: tuple
    radial_grid: np.ndarray
    angle_samples: np.ndarray
    worst_margin: float
    verdict: str
    violation_points: list
    violation_count: int
    truncation: str | None
    derivative_error: float
    requirement: str = "nonpositive"

    def to_dict(self) -> dict:
        return {
            "label": self.candidate.label,
            "monotonicity": self.candidate.monotonicity,
            "interval": list(self.radial_interval),
            "grid": {
                "r_min": float(self.radial_grid[0]),
                "r_max": float(self.radial_grid[-1]),
                "radial_points": int(len(self.radial_grid)),
                "angle_samples": int(len(self.angle_samples)),
            },
            "worst_margin": self.worst_margin,
            "verdict": self.verdict,
            "violation_count": self.violation_count,
            "violations": [
                {"r": r, "angle_index": k, "phi": list(phi), "margin": m}
                for r, k, phi, m in self.violation_points
            ],
            "truncation": self.truncation,
            "derivative_error": self.derivative_error,
            "requirement": self.requirement,
        }


def _truncate(interval) -> tuple[float, float, str | None]:
    lo, hi = float(interval[0]), float(interval[1])
    notes = []
    if lo <= 0:
        lo = INNER_FLOOR
        notes.append(f"lower end 0 replaced by {INNER_FLOOR:g}")
    if math.isinf(hi):
        hi = OUTER_SPAN * lo
        notes.append(f"upper end inf replaced by {OUTER_SPAN:g} * lower end = {hi:g}")
    if not hi > lo:
        raise ValueError(f"empty interval {interval}")
    return lo, hi, "; ".join(notes) or None


def radial_grid(lo: float, hi: float, per_decade: int) -> np.ndarray:
    decades = math.log10(hi / lo)
    return np.geomspace(lo, hi, max(2, int(math.ceil(decades * per_decade)) + 1))


def sphere_samples(n: int, count: int, seed: int) -> np.ndarray:
    z = np.random.default_rng(seed).standard_normal((count, n))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _system_of(scenario):
    return getattr(scenario, "system", scenario)


def check_certificate(
    scenario,
    V: LyapunovCandidate,
    interval,
    grid_density: int = 64,
    angle_sample_count: int = 256,
    seed: int = 0,
    require: str = "nonpositive",
) -> LyapunovCertificate:
    """Evaluate ``L_phi[V](r)`` on a log-spaced radial grid times random angles.

    ``interval`` may be ``(0, delta)`` or ``(Delta, inf)``; infinite or zero
    ends are replaced by finite ones and the replacement is recorded.
    Certified iff every generator value is at most ``+1e-10``.

    ``require="nonnegative"`` flips the test (certified iff every value is at
    least ``-1e-10``); for an increasing ``V`` that blows down at 0 this is the
    submartingale condition that actually rules out reaching the origin.
    The margin is always reported with the sign for which positive means
    violation.
    """
    if grid_density < 16:
        raise ValueError("grid_density must be at least 16 points per decade")
    if require not in ("nonpositive", "nonnegative"):
        raise ValueError(f"unknown requirement {require!r}")
    sys = _system_of(scenario)
    lo, hi, truncation = _truncate(interval)
    grid = radial_grid(lo, hi, grid_density)
    V.check_monotone(grid)
    deriv_err = V.derivative_error(grid)
    if deriv_err > 1e-4:
        raise CertificateError(f"{V.label}: derivatives disagree with finite differences (rel. error {deriv_err:.3g})")
    angles = sphere_samples(sys.dim_state, angle_sample_count, seed)
    G, K = len(grid), len(angles)
    r_all = np.repeat(grid, K)
    phi_all = np.tile(angles, (G, 1))
    c = polar_coefficients(sys, r_all, phi_all)
    margins = apply_generator(c.mu, c.sigma, V, r_all).reshape(G, K)
    if require == "nonnegative":
        margins = -margins
    worst = float(np.max(margins))
    bad_g, bad_k = np.nonzero(margins > MARGIN_TOL)
    # np.nonzero is row-major: already sorted by (r, angle index)
    points = [
        (float(grid[g]), int(k), tuple(float(v) for v in angles[k]), float(margins[g, k]))
        for g, k in zip(bad_g[:MAX_REPORTED_VIOLATIONS], bad_k[:MAX_REPORTED_VIOLATIONS])
    ]
    return LyapunovCertificate(
        candidate=V,
        radial_interval=(float(interval[0]), float(interval[1])),
        radial_grid=grid,
        angle_samples=angles,
        worst_margin=worst,
        verdict="certified" if worst <= MARGIN_TOL else "violated",
        violation_points=points,
        violation_count=int(len(bad_g)),
        truncation=truncation,
        derivative_error=deriv_err,
        requirement=require,
    )


# -- scale function -----------------------------------------------------------

@dataclass(frozen=True)
class ScaleFunctionTable:
    nodes: np.ndarray
    values: np.ndarray
    left_divergence: str
    left_increment_ratio: float
    left_log_slope: float
    right_limit: str
    right_value: float | None

    def to_csv(self) -> str:
        lines = ["r,s"] + [f"{r:.17g},{s:.17g}" for r, s in zip(self.nodes, self.values)]
        return "\n".join(lines) + "\n"


LEFT_PROBES = (1e-2, 1e-4, 1e-6)


def _quad(f, a, b, epsabs):
    if a == b:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, epsabs=epsabs, epsrel=1e-12, limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature on [{a:.6g}, {b:.6g}] did not converge: {exc}") from exc
    if not np.isfinite(val):
        raise QuadratureError(f"non-finite quadrature on [{a:.6g}, {b:.6g}]")
    return val


def _panels(points: np.ndarray) -> np.ndarray:
    """Refine a sorted point set so neighbouring points differ by at most 2x."""
    out = [points[0]]
    for p in points[1:]:
        q = out[-1]
        k = int(math.ceil(math.log2(p / q))) if p > q else 0
        out.extend(np.geomspace(q, p, k + 1)[1:] if k > 1 else [p])
    return np.array(out)


def scale_function(mu_radial, sigma_radial, nodes, epsabs: float = 1e-10) -> ScaleFunctionTable:
    """``s(r) = int_1^r exp(-int_1^u 2 mu / sigma**2 dv) du`` at ``nodes``.

    Both integrals are adaptive quadratures on panels of at most a factor two
    in ``r``, so the inner integral restarts from the panel's left end.
    """
    nodes = np.asarray(nodes, dtype=float)
    if np.any(nodes <= 0) or np.any(np.diff(nodes) <= 0):
        raise ValueError("nodes must be positive and strictly increasing")

    def h(v):
        s = float(sigma_radial(v))
        if not s > 0:
            raise ValueError(f"sigma must be positive, got {s} at r={v:.6g}")
        return 2.0 * float(mu_radial(v)) / (s * s)

    pts = _panels(np.union1d(np.union1d(nodes, LEFT_PROBES), [1.0]))
    i1 = int(np.flatnonzero(pts == 1.0)[0])
    inner = np.zeros(len(pts))
    s_val = np.zeros(len(pts))
    # walk outward from r = 1 in both directions
    for direction in (1, -1):
        rng_ = range(i1 + 1, len(pts)) if direction == 1 else range(i1 - 1, -1, -1)
        for i in rng_:
            j = i - direction
            a, b = pts[j], pts[i]
            base = inner[j]
            inner[i] = base + _quad(h, a, b, epsabs)
            outer = _quad(lambda u: math.exp(-(base + _quad(h, a, u, epsabs))), a, b, epsabs)
            s_val[i] = s_val[j] + outer

    lookup = dict(zip(pts.tolist(), s_val.tolist()))
    values = np.array([lookup[float(r)] for r in nodes])
    s2, s4, s6 = (lookup[p] for p in LEFT_PROBES)
    d1, d2 = s4 - s2, s6 - s4
    ratio = d2 / d1 if d1 != 0 else math.inf
    left = "divergent" if ratio >= 0.95 else "convergent"
    log_slope = d2 / math.log(1e-2)

    right, right_value = _right_limit(nodes, values)
    return ScaleFunctionTable(nodes, values, left, float(ratio), float(log_slope), right, right_value)


def _right_limit(nodes, values):
    if len(nodes) < 3:
        return "divergent", None
    n1, n2, n3 = nodes[-3:]
    v1, v2, v3 = values[-3:]
    d1, d2 = v2 - v1, v3 - v2
    if abs(d2) <= 1e-12 * max(1.0, abs(v3)):
        return "finite", float(v3)
    rate = (d2 / math.log(n3 / n2)) / (d1 / math.log(n2 / n1))
    if rate >= 0.5:
        return "divergent", None
    geo = d2 / d1
    tail = d2 * geo / (1 - geo) if 0 < geo < 1 else 0.0
    return "finite", float(v3 + tail)


# -- interval exit bounds -----------------------------------------------------

def _interval_grid(x1: float, x2: float, points: int) -> np.ndarray:
    if x1 > 0 and x2 / x1 > 10:
        return np.geomspace(x1, x2, points)
    return np.linspace(x1, x2, points)


def _certify_1d(V: LyapunovCandidate, mu, sigma, grid, bound: float, what: str):
    if mu is None or sigma is None:
        return
    x = np.asarray(grid, dtype=float)
    m = np.array([float(mu(v)) for v in x])
    s = np.array([float(sigma(v)) for v in x])
    L = m * V.first_derivative(x) + 0.5 * s * s * V.second_derivative(x)
    if np.max(L) > bound + MARGIN_TOL:
        i = int(np.argmax(L))
        raise CertificateError(f"{what}: generator {L[i]:.6g} exceeds {bound:g} at x={x[i]:.6g}")


def exit_probability_bounds(V: LyapunovCandidate, x0, x1, x2, mu=None, sigma=None, points: int = 1025):
    """Bounds on the exit side of ``[x1, x2]`` from a decreasing ``V`` with
    ``L[V] <= 0``: ``(upper bound on P(exit left), lower bound on P(exit right))``.

    When ``mu`` and ``sigma`` are given, the generator condition is checked on
    a grid first.
    """
    if not (x1 <= x0 <= x2) or not x1 < x2:
        raise ValueError("need x1 <= x0 <= x2 with x1 < x2")
    grid = _interval_grid(x1, x2, points)
    if V.monotonicity != "decreasing":
        raise MonotonicityError("exit bounds need a decreasing candidate")
    V.check_monotone(grid)
    _certify_1d(V, mu, sigma, grid, 0.0, "exit_probability_bounds")
    v0, v1, v2 = (float(V.value(np.float64(x))) for x in (x0, x1, x2))
    if v1 == v2:
        raise CertificateError("degenerate certificate: V(x1) == V(x2)")
    upper_left = (v0 - v2) / (v1 - v2)
    lower_right = (v1 - v0) / (v1 - v2)
    return upper_left, lower_right


def exit_time_bound(u: LyapunovCandidate, interval, mu=None, sigma=None, points: int = 4097) -> float:
    """``2 max |u|`` over the interval, a bound on the mean exit time when
    ``L[u] <= -1`` there (checked on the grid if ``mu`` and ``sigma`` are given)."""
    x1, x2 = float(interval[0]), float(interval[1])
    grid = np.array([x1]) if x1 == x2 else _interval_grid(x1, x2, points)
    if x1 != x2:
        _certify_1d(u, mu, sigma, grid, -1.0, "exit_time_bound")
    return float(2.0 * np.max(np.abs(u.value(grid))))


@dataclass(frozen=True)
class ExitSample:
    left_fraction: float
    left_stderr: float
    mean_time: float
    time_stderr: float
    n_paths: int


def simulate_exit(mu, sigma, x0: float, interval, n_paths: int = 10_000, dt: float = 1e-3,
                  seed: int = 0, t_max: float = 1e3) -> ExitSample:
    """Monte Carlo exit side and time of a 1-D diffusion from ``interval``.

    Euler steps with a Brownian-bridge crossing test between steps, which
    removes the first-order bias of checking the barrier only at grid times.
    ``mu`` and ``sigma`` must accept arrays.
    """
    x1, x2 = map(float, interval)
    keys = rng.path_keys(seed, np.arange(n_paths))
    x = np.full(n_paths, float(x0))
    t = np.zeros(n_paths)
    side = np.zeros(n_paths, dtype=np.int8)  # -1 left, +1 right, 0 running
    at_left = x <= x1
    at_right = x >= x2
    side[at_left] = -1
    side[at_right & ~at_left] = 1
    u_stream = rng.path_keys(seed ^ 0x5DEECE66D, np.arange(n_paths))
    step = 0
    sq = math.sqrt(dt)
    while True:
        rows = np.flatnonzero(side == 0)
        if not len(rows) or step * dt > t_max:
            break
        xr = x[rows]
        s = np.asarray(sigma(xr), dtype=float) * np.ones_like(xr)
        m = np.asarray(mu(xr), dtype=float) * np.ones_like(xr)
        z = rng.normals(keys[rows], step, 1)[:, 0]
        xn = xr + m * dt + s * sq * z
        t[rows] += dt
        # crossing probability of the bridge for each barrier, given both ends inside
        u = np.clip(rng_uniform(u_stream[rows], step), 1e-300, 1.0)
        s2dt = np.maximum(s * s * dt, 1e-300)
        pl = np.where((xr > x1) & (xn > x1), np.exp(-2.0 * (xr - x1) * (xn - x1) / s2dt), 1.0)
        pr = np.where((xr < x2) & (xn < x2), np.exp(-2.0 * (x2 - xr) * (x2 - xn) / s2dt), 1.0)
        left = (xn <= x1) | (u < pl)
        right = ~left & ((xn >= x2) | (u < pl + pr))
        side[rows[left]] = -1
        side[rows[right]] = 1
        x[rows] = xn
        step += 1
    done = side != 0
    left_frac = float(np.mean(side[done] == -1))
    n = int(done.sum())
    return ExitSample(
        left_fraction=left_frac,
        left_stderr=math.sqrt(left_frac * (1 - left_frac) / n),
        mean_time=float(np.mean(t[done])),
        time_stderr=float(np.std(t[done], ddof=1) / math.sqrt(n)),
        n_paths=n,
    )


def rng_uniform(keys, step) -> np.ndarray:
    """Uniforms in (0, 1) from the same counter streams (via the normal CDF)."""
    from scipy.special import ndtr

    return ndtr(rng.normals(keys, step, 1)[:, 0])


# -- Gronwall-type bound ------------------------------------------------------

@dataclass(frozen=True)
class GronwallInstance:
    """``u(t) <= a(t) + C int_0^t u(s)**beta ds`` with non-decreasing ``a``."""

    C: float
    beta: float
    a_fn: Callable
    u_fn: Callable

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not (0.0 < self.beta < 1.0):
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")


@dataclass(frozen=True)
class GronwallResult:
    t: np.ndarray
    u: np.ndarray
    bound: np.ndarray
    sharp: np.ndarray
    holds: np.ndarray

    @property
    def all_hold(self) -> bool:
        return bool(np.all(self.holds))


def gronwall_bound(inst: GronwallInstance, t_grid) -> GronwallResult:
    """Envelope ``Ct * ((1 - beta) t + a(t)**(1 - beta))**(1/(1 - beta))`` with
    ``Ct = max(C, 1)**(1/(1 - beta))``.

    With ``C >= 1`` this is the textbook form ``C**(1/(1-beta)) (...)``.  For
    ``C < 1`` that form is too small already at ``t = 0`` (it gives
    ``C**(1/(1-beta)) a(0) < a(0)``), so the constant is clamped at 1, which is
    legitimate because the hypothesis with ``C`` implies it with ``max(C, 1)``.
    ``sharp`` is the tight envelope ``(a**(1-beta) + (1-beta) C t)**(1/(1-beta))``.
    """
    t = np.asarray(t_grid, dtype=float)
    a = np.asarray([float(inst.a_fn(s)) for s in t])
    if np.any(np.diff(a) < 0):
        raise ValueError("a(t) must be non-decreasing on the grid")
    if np.any(a < 0):
        raise ValueError("a(t) must be non-negative")
    u = np.asarray([float(inst.u_fn(s)) for s in t])
    q = 1.0 - inst.beta
    c_tilde = max(inst.C, 1.0) ** (1.0 / q)
    bound = c_tilde * (q * t + a**q) ** (1.0 / q)
    sharp = (a**q + q * inst.C * t) ** (1.0 / q)
    holds = u <= bound * (1.0 + 1e-9)
    return GronwallResult(t, u, bound, sharp, holds)
