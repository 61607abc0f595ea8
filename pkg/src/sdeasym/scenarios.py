"""Built-in SDE scenarios, a name registry and TOML scenario configs.

A scenario bundles a system with what is known about it: the closed-form
power law (when there is one), the angle-stabilization constants, the
Lyapunov certificates expected to hold and the scale-function classification.
"""
from __future__ import annotations

import difflib
import math
import re
from dataclasses import dataclass, field

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .asymptotics import AngleStabilizationSpec, PowerLawModel
from .core_model import SdeSystem, identity_diffusion, norm, polar_coefficients
from .lyapunov import LyapunovCandidate, inverse_candidate, log_candidate, negative_power_candidate

FAMILIES = ("power_drift", "perturbed_drift", "planar_sqrt")
INNER_RADIUS = 0.1
OUTER_RADIUS = 10.0


class ConfigError(ValueError):
    pass


class UnknownScenarioError(KeyError):
    def __init__(self, name: str, suggestion: str | None):
        self.name = name
        self.suggestion = suggestion
        hint = f"; closest registered scenario is {suggestion!r}" if suggestion else ""
        super().__init__(f"unknown scenario {name!r}{hint}")

    def __str__(self):
        return self.args[0]


@dataclass(frozen=True)
class CertificateSpec:
    candidate: LyapunovCandidate
    interval: tuple
    role: str
    expected: str = "certified"


@dataclass(frozen=True)
class Scenario:
    name: str
    system: SdeSystem
    x0: tuple
    config: dict = field(compare=False)
    polar_truth: PowerLawModel | None = field(default=None, compare=False)
    angle_spec: AngleStabilizationSpec | None = field(default=None, compare=False)
    certificates: tuple = field(default=(), compare=False)
    scale_expectation: tuple | None = field(default=None, compare=False)
    notes: str = ""

    @property
    def dim(self) -> int:
        return self.system.dim_state

    def radial_coefficients(self):
        """``(mu(r), sigma(r))`` along ``e_1``; meaningful when these do not
        depend on the angle, as for the power-drift families."""
        e1 = np.zeros(self.dim)
        e1[0] = 1.0

        def mu(r):
            return float(polar_coefficients(self.system, float(r), e1).mu)

        def sigma(r):
            return float(polar_coefficients(self.system, float(r), e1).sigma)

        return mu, sigma

    def to_config(self) -> dict:
        return dict(self.config)


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def _unit_x0(n: int) -> tuple:
    return (1.0,) + (0.0,) * (n - 1)


def _check_x0(x0, n) -> tuple:
    x0 = tuple(float(v) for v in x0)
    if len(x0) != n:
        raise ConfigError(f"x0 has length {len(x0)}, expected {n}")
    if not norm(np.array(x0)) > 0:
        raise ConfigError("x0 must be nonzero")
    return x0


def _angle_drift_star(n: int) -> float:
    return (2.0 * math.sqrt(n - 1) + n - 1) / 2.0


# -- families -----------------------------------------------------------------

def _radial_power(x, alpha, scale):
    r = norm(x)
    return (scale * r ** (alpha - 1.0))[..., None] * x


def build_power_drift(n: int, alpha: float, drift_scale: float = 1.0, x0=None) -> Scenario:
    """``dX = c |X|**(alpha - 1) X dt + dW`` in ``R^n``.

    Radius drift ``c r**alpha + (n - 1)/(2 r)``; with ``c > 0`` the radius
    grows like ``((1 - alpha) c t)**(1/(1 - alpha))``.
    """
    n = int(n)
    alpha = float(alpha)
    drift_scale = float(drift_scale)
    if n < 2:
        raise ConfigError("n must be >= 2")
    if not (-1.0 < alpha < 1.0):
        raise ConfigError(f"alpha must lie in (-1, 1), got {alpha}")
    x0 = _unit_x0(n) if x0 is None else _check_x0(x0, n)
    name = f"power_drift:n={n},alpha={_fmt(alpha)}"
    if drift_scale != 1.0:
        name += f",drift_scale={_fmt(drift_scale)}"
    sys = SdeSystem(n, n, lambda x: _radial_power(x, alpha, drift_scale), identity_diffusion(n), name)
    truth = angle = None
    if drift_scale > 0:
        truth = PowerLawModel(alpha, lambda phi, c=drift_scale: c, name)
        angle = AngleStabilizationSpec(
            gamma=1.0 / (1.0 - alpha), delta1=2.0, delta2=1.0,
            nu_star=_angle_drift_star(n), chi_star=math.sqrt(n - 1),
        )
    certs = (CertificateSpec(inverse_candidate(), (OUTER_RADIUS, math.inf), "outer"),)
    config = {"name": "power_drift", "n": n, "m": n, "alpha": alpha, "drift_scale": drift_scale, "x0": list(x0)}
    return Scenario(name, sys, x0, config, truth, angle, certs, ("divergent", "finite") if drift_scale > 0 else None)


def rotation_generator(n: int) -> np.ndarray:
    """Block-diagonal quarter-turn generator; for odd ``n`` the last axis is fixed."""
    J = np.zeros((n, n))
    for i in range(0, n - 1, 2):
        J[i, i + 1] = -1.0
        J[i + 1, i] = 1.0
    return J


def build_perturbed_drift(n: int, alpha: float, eps: float, c2: float, f_choice: str = "rotation", x0=None) -> Scenario:
    """Power drift plus a tangential term ``c2 |X|**(alpha - eps) J X/|X|``.

    The perturbation is orthogonal to ``X``, so the radius drift is unchanged
    and only the angle sees it, with size ``c2 r**(alpha - eps - 1)``.
    ``f_choice="none"`` drops it and reproduces the power drift exactly.
    """
    n = int(n)
    alpha, eps, c2 = float(alpha), float(eps), float(c2)
    if not (-1.0 < alpha < 1.0):
        raise ConfigError(f"alpha must lie in (-1, 1), got {alpha}")
    if not (0.0 < eps < 1.0 + alpha):
        raise ConfigError(f"eps must lie in (0, 1 + alpha) = (0, {1 + alpha:g}), got {eps}")
    if not c2 > 0:
        raise ConfigError(f"c2 must be positive, got {c2}")
    if f_choice not in ("rotation", "none"):
        raise ConfigError(f"unknown perturbation {f_choice!r} (choose 'rotation' or 'none')")
    x0 = _unit_x0(n) if x0 is None else _check_x0(x0, n)
    name = f"perturbed_drift:n={n},alpha={_fmt(alpha)},eps={_fmt(eps)},c2={_fmt(c2)}"
    if f_choice != "rotation":
        name += f",f={f_choice}"
    J = rotation_generator(n)

    if f_choice == "none":
        def drift(x):
            return _radial_power(x, alpha, 1.0)
    else:
        def drift(x):
            x = np.asarray(x, dtype=float)
            r = norm(x)
            Jx = x[..., 0, None] * J[:, 0]
            for k in range(1, n):
                Jx = Jx + x[..., k, None] * J[:, k]
            # c2 r**(alpha - eps) J x / r
            return _radial_power(x, alpha, 1.0) + (c2 * r ** (alpha - eps - 1.0))[..., None] * Jx

    sys = SdeSystem(n, n, drift, identity_diffusion(n), name)
    truth = PowerLawModel(alpha, label=name)
    angle = AngleStabilizationSpec(
        gamma=1.0 / (1.0 - alpha), delta1=1.0 - alpha + eps, delta2=1.0,
        nu_star=c2 + (n - 1) / 2.0, chi_star=math.sqrt(n - 1),
    )
    certs = (
        CertificateSpec(negative_power_candidate(n - 1), (0.0, INNER_RADIUS), "inner"),
        CertificateSpec(inverse_candidate(), (OUTER_RADIUS, math.inf), "outer"),
    )
    config = {"name": "perturbed_drift", "n": n, "m": n, "alpha": alpha, "eps": eps, "c2": c2,
              "f": f_choice, "x0": list(x0)}
    return Scenario(name, sys, x0, config, truth, angle, certs, ("divergent", "finite"))


def _planar_sqrt_drift(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.sqrt(np.abs(x))


def build_planar_sqrt(x0=None) -> Scenario:
    """``dX_i = sgn(X_i) sqrt(|X_i|) dt + dW_i`` in the plane.

    No closed-form power law; the radius drift depends on the angle.
    """
    x0 = _unit_x0(2) if x0 is None else _check_x0(x0, 2)
    name = "planar_sqrt"
    sys = SdeSystem(2, 2, _planar_sqrt_drift, identity_diffusion(2), name)
    certs = (
        CertificateSpec(log_candidate(), (0.0, INNER_RADIUS), "inner"),
        CertificateSpec(inverse_candidate(), (OUTER_RADIUS, math.inf), "outer"),
    )
    config = {"name": "planar_sqrt", "n": 2, "m": 2, "x0": list(x0)}
    return Scenario(name, sys, x0, config, None, None, certs, None,
                    notes="radius drift depends on the angle; no closed-form asymptotics")


# -- registry -----------------------------------------------------------------

_BUILTIN_SPECS = (
    ("power_drift", {"n": 2, "alpha": 0.5}),
    ("power_drift", {"n": 2, "alpha": 0.0}),
    ("power_drift", {"n": 2, "alpha": -0.5}),
    ("power_drift", {"n": 3, "alpha": 0.0}),
    ("perturbed_drift", {"n": 3, "alpha": 0.0, "eps": 0.5, "c2": 0.1}),
    ("perturbed_drift", {"n": 2, "alpha": 0.0, "eps": 0.5, "c2": 0.1}),
    ("planar_sqrt", {}),
)

_registry: dict[str, Scenario] = {}


def _build(family: str, params: dict) -> Scenario:
    params = dict(params)
    try:
        if family == "power_drift":
            allowed = {"n", "alpha", "drift_scale", "x0"}
            if params.keys() - allowed:
                _unexpected(family, {k: v for k, v in params.items() if k not in allowed})
            return build_power_drift(params["n"], params["alpha"], params.get("drift_scale", 1.0), params.get("x0"))
        if family == "perturbed_drift":
            allowed = {"n", "alpha", "eps", "c2", "f", "x0"}
            if params.keys() - allowed:
                _unexpected(family, {k: v for k, v in params.items() if k not in allowed})
            return build_perturbed_drift(params["n"], params["alpha"], params["eps"], params["c2"],
                                         params.get("f", "rotation"), params.get("x0"))
        if family == "planar_sqrt":
            if params.keys() - {"n", "x0"}:
                _unexpected(family, {k: v for k, v in params.items() if k not in ("n", "x0")})
            if params.get("n", 2) != 2:
                raise ConfigError("planar_sqrt is two-dimensional")
            return build_planar_sqrt(params.get("x0"))
    except KeyError as exc:
        raise ConfigError(f"{family}: missing parameter {exc.args[0]!r}") from None
    raise ConfigError(f"unknown scenario family {family!r}")


def _unexpected(family, params):
    raise ConfigError(f"{family}: unexpected parameters {sorted(params)}")


def register(scenario: Scenario) -> None:
    _registry[scenario.name] = scenario


def _ensure_builtins():
    if not _registry:
        for family, params in _BUILTIN_SPECS:
            register(_build(family, params))


def registry_list() -> list[str]:
    _ensure_builtins()
    return sorted(_registry)


_NAME_RE = re.compile(r"^([a-z_]+)(?::(.*))?$")


def _parse_name(name: str):
    m = _NAME_RE.match(name.strip())
    if not m or m.group(1) not in FAMILIES:
        return None
    params = {}
    if m.group(2):
        for item in m.group(2).split(","):
            key, sep, val = item.partition("=")
            if not sep:
                return None
            key = key.strip()
            val = val.strip()
            if key == "f":
                params[key] = val
            elif key == "n":
                try:
                    params[key] = int(val)
                except ValueError:
                    return None
            else:
                try:
                    params[key] = float(val)
                except ValueError:
                    return None
    return m.group(1), params


def registry_lookup(name: str) -> Scenario:
    """Exact lookup, then parametric family names such as
    ``power_drift:n=4,alpha=0.25`` (built on demand)."""
    _ensure_builtins()
    if name in _registry:
        return _registry[name]
    parsed = _parse_name(name)
    if parsed is not None:
        try:
            sc = _build(*parsed)
        except ConfigError:
            pass
        else:
            return _registry.get(sc.name, sc)
    close = difflib.get_close_matches(name, list(_registry), n=1, cutoff=0.0)
    raise UnknownScenarioError(name, close[0] if close else None)


# -- configs ------------------------------------------------------------------

def scenario_from_config(cfg: dict) -> Scenario:
    cfg = dict(cfg)
    family = cfg.pop("name", None)
    if family is None:
        raise ConfigError("config needs a 'name' field naming the scenario family")
    cfg.pop("seed", None)
    m = cfg.pop("m", None)
    n = cfg.get("n")
    if m is not None and n is not None and int(m) != int(n):
        raise ConfigError(f"only identity noise is supported (m must equal n = {n})")
    if "n" in cfg:
        cfg["n"] = int(cfg["n"])
    return _build(family, cfg)


def read_config(path) -> tuple[Scenario, dict]:
    """Parse a TOML scenario file; returns the scenario and the raw table."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    table = raw.get("scenario", raw)
    return scenario_from_config({k: v for k, v in table.items() if k != "run"}), raw


def write_config(scenario: Scenario, path, seed: int | None = None, run: dict | None = None) -> None:
    table = scenario.to_config()
    if seed is not None:
        table["seed"] = int(seed)
    doc = {"scenario": table}
    if run:
        doc["run"] = dict(run)
    with open(path, "wb") as fh:
        tomli_w.dump(doc, fh)
