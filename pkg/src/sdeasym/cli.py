"""Command-line front end.

    sdeasym simulate|certify|analyze|report --scenario NAME | --config PATH
            [--paths N] [--t-end T] [--seed S] [--out DIR] [--threads K]

Exit status: 0 ok, 2 configuration error, 3 simulation failure,
4 certificate verdicts differ from expectations, 5 analysis failure.
``SDEASYM_SEED`` in the environment overrides ``--seed``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import asymptotics as asy
from . import integrator as integ
from . import lyapunov as lyap
from . import scenarios as scn

log = logging.getLogger("sdeasym")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_CERTIFICATE = 4
EXIT_ANALYSIS = 5

SEED_ENV = "SDEASYM_SEED"
COMMANDS = ("simulate", "certify", "analyze", "report")
ANALYSES = ("fit_power_law", "angle_diagnostics", "sde_ode_equivalence")
SCALE_NODES = tuple(np.geomspace(1e-2, 1e3, 16).tolist())

# pass/fail tolerances of the analysis checks
EXPONENT_RTOL = 0.05
PREFACTOR_RTOL = 0.20
RATIO_TOL = 0.10


class ConfigError(ValueError):
    """Invalid run configuration; the message starts with the offending field."""


@dataclass
class RunConfig:
    command: str
    scenario: str | None = None
    config_path: str | None = None
    n_paths: int = 64
    t_end: float = 1e4
    dt_max: float | None = None
    dt_min: float = 1e-9
    relative_scale: float = 0.01
    base_seed: int = 0
    out_dir: str = "out"
    threads: int = 1
    save_paths: int = 4
    representation: str = "cartesian"
    r_floor: float = integ.R_FLOOR
    ode_dt: float = 1.0
    analyses: tuple = ANALYSES
    config_bytes: bytes = field(default=b"", repr=False)

    @property
    def effective_dt_max(self) -> float:
        return self.t_end / 1000.0 if self.dt_max is None else self.dt_max

    def schedule(self) -> integ.StepSchedule:
        levels = 4 if self.t_end >= 16 * self.effective_dt_max else 0
        extra = tuple(integ.dyadic_times(self.t_end, levels)) if levels else ()
        return integ.StepSchedule(
            t_end=self.t_end,
            dt_max=self.effective_dt_max,
            dt_min=self.dt_min,
            relative_scale=self.relative_scale,
            extra_times=extra,
        )

    def hashed_fields(self) -> dict:
        # everything that affects results; threads and the output location do not
        d = {k: v for k, v in asdict(self).items() if k not in ("threads", "out_dir", "config_bytes", "command")}
        d["analyses"] = list(self.analyses)
        return d

    def config_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.config_bytes)
        h.update(json.dumps(self.hashed_fields(), sort_keys=True).encode())
        return h.hexdigest()

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"command: unknown command {self.command!r}")
        if self.n_paths < 1:
            raise ConfigError("paths: must be >= 1")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ConfigError("t_end: must be positive and finite")
        if self.threads < 1:
            raise ConfigError("threads: must be >= 1")
        if self.save_paths < 0:
            raise ConfigError("save_paths: must be >= 0")
        if not self.r_floor > 0:
            raise ConfigError("r_floor: must be positive")
        if self.representation not in ("cartesian", "polar"):
            raise ConfigError(f"representation: must be 'cartesian' or 'polar', got {self.representation!r}")
        bad = [a for a in self.analyses if a not in ANALYSES]
        if bad:
            raise ConfigError(f"analyses: unknown estimator(s) {bad}; choose from {list(ANALYSES)}")
        try:
            self.schedule()
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from exc


def meta(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": cfg.base_seed, "tool_version": f"sdeasym {__version__}"}


def _clean(obj):
    """Make a structure JSON-safe: numpy scalars to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n")


def write_csv(path: Path, header: str, rows) -> None:
    lines = [header] + [",".join(f"{float(v):.17g}" for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"out: cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"out: output directory {out} is not writable")
    return out


def _scenario_block(sc: scn.Scenario) -> dict:
    return {"name": sc.name, "config": sc.to_config(), "notes": sc.notes}


# -- commands -----------------------------------------------------------------

def _simulate(cfg: RunConfig, sc: scn.Scenario) -> integ.Ensemble:
    return integ.run_ensemble(
        sc, cfg.n_paths, cfg.schedule(), cfg.base_seed,
        representation=cfg.representation, threads=cfg.threads, r_floor=cfg.r_floor,
    )


def cmd_simulate(cfg: RunConfig, sc: scn.Scenario) -> int:
    out = _out_dir(cfg)
    ens = _simulate(cfg, sc)
    for tr in ens.trajectories[: cfg.save_paths]:
        (out / f"path_{tr.path_index:04d}.csv").write_text(tr.to_csv())
    sched = cfg.schedule()
    write_json(out / "summary.json", {
        "meta": meta(cfg),
        "scenario": _scenario_block(sc),
        "schedule": {"t_end": sched.t_end, "dt_max": sched.dt_max, "dt_min": sched.dt_min,
                     "relative_scale": sched.relative_scale, "checkpoints": len(sched.times)},
        "representation": cfg.representation,
        "r_floor": cfg.r_floor,
        "summary": ens.summary.to_dict(),
    })
    return EXIT_OK


def _safe_label(label: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in label).strip("_") or "candidate"


def cmd_certify(cfg: RunConfig, sc: scn.Scenario) -> int:
    out = _out_dir(cfg)
    entries = []
    mismatched = []
    for k, spec in enumerate(sc.certificates):
        fname = f"certificate_{k}_{spec.role}_{_safe_label(spec.candidate.label)}.json"
        try:
            cert = lyap.check_certificate(sc, spec.candidate, spec.interval, seed=cfg.base_seed)
            verdict = cert.verdict
            body = cert.to_dict()
        except lyap.MonotonicityError as exc:
            verdict = "monotonicity-violation"
            body = {"label": spec.candidate.label, "interval": list(spec.interval), "verdict": verdict,
                    "error": str(exc)}
        body.update({"meta": meta(cfg), "role": spec.role, "expected": spec.expected, "scenario": sc.name})
        write_json(out / fname, body)
        ok = verdict == spec.expected
        entries.append({"file": fname, "label": spec.candidate.label, "role": spec.role,
                        "expected": spec.expected, "verdict": verdict, "matches": ok,
                        "worst_margin": body.get("worst_margin")})
        if not ok:
            mismatched.append((spec, body))

    scale = None
    if sc.scale_expectation is not None:
        mu, sigma = sc.radial_coefficients()
        try:
            tab = lyap.scale_function(mu, sigma, SCALE_NODES)
        except lyap.QuadratureError as exc:
            scale = {"error": str(exc), "matches": False}
        else:
            (out / "scale_function.csv").write_text(tab.to_csv())
            got = (tab.left_divergence, tab.right_limit)
            scale = {
                "expected": list(sc.scale_expectation), "classification": list(got),
                "matches": got == tuple(sc.scale_expectation),
                "left_increment_ratio": tab.left_increment_ratio, "left_log_slope": tab.left_log_slope,
                "right_value": tab.right_value, "file": "scale_function.csv",
            }
    all_certified = all(e["verdict"] == "certified" for e in entries if e["expected"] == "certified")
    matches = not mismatched and (scale is None or scale["matches"])
    write_json(out / "certify.json", {
        "meta": meta(cfg),
        "scenario": _scenario_block(sc),
        "certificates": entries,
        "scale_function": scale,
        "summary_verdict": "certified" if all_certified else "violated",
        "matches_expectations": matches,
    })
    for spec, body in mismatched:
        print(f"certificate mismatch: {spec.candidate.label} on {spec.interval} expected {spec.expected}, "
              f"got {body['verdict']} (worst margin {body.get('worst_margin')})", file=sys.stderr)
        for v in body.get("violations", [])[:5]:
            print(f"  violation at r={v['r']:.6g}, angle #{v['angle_index']}: margin {v['margin']:.6g}",
                  file=sys.stderr)
    if scale is not None and not scale["matches"]:
        print(f"scale-function classification mismatch: {scale}", file=sys.stderr)
    return EXIT_OK if matches else EXIT_CERTIFICATE


def _analysis_checks(sc: scn.Scenario, name: str, result) -> list[dict]:
    checks = []
    if name == "fit_power_law" and sc.polar_truth is not None:
        want = sc.polar_truth.exponent
        checks.append({"check": "exponent", "value": result.exponent, "target": want, "rtol": EXPONENT_RTOL,
                       "passed": abs(result.exponent - want) <= EXPONENT_RTOL * want})
        pref = sc.polar_truth.prefactor()
        checks.append({"check": "prefactor", "value": result.prefactor, "target": pref, "rtol": PREFACTOR_RTOL,
                       "passed": abs(result.prefactor - pref) <= PREFACTOR_RTOL * pref})
    elif name == "angle_diagnostics" and sc.angle_spec is not None and asy.check_angle_conditions(sc.angle_spec):
        m = [v for _, v in result.medians]
        checks.append({"check": "strictly_decreasing", "values": m,
                       "passed": all(b < a for a, b in zip(m, m[1:]))})
        checks.append({"check": "final_below_half_first", "first": m[0], "final": m[-1],
                       "passed": m[-1] < 0.5 * m[0]})
    elif name == "sde_ode_equivalence" and sc.polar_truth is not None:
        checks.append({"check": "last_decade_ratio", "value": result.last_decade_median, "tol": RATIO_TOL,
                       "passed": result.deviation <= RATIO_TOL})
    return checks


def cmd_analyze(cfg: RunConfig, sc: scn.Scenario) -> int:
    out = _out_dir(cfg)
    ens = _simulate(cfg, sc)
    t_end = cfg.t_end
    report = {"meta": meta(cfg), "scenario": _scenario_block(sc), "estimators": {}, "failures": []}
    for name in cfg.analyses:
        try:
            if name == "fit_power_law":
                res = asy.fit_power_law(ens.trajectories, (t_end / 100.0, t_end))
                times = ens.trajectories[0].times
                kept = [tr.radius() for tr in ens.trajectories if not tr.floor_hit]
                med = np.median(np.stack(kept), axis=0)
                write_csv(out / "fit_power_law.csv", "t,median_radius", zip(times, med))
                body = {"exponent": res.exponent, "prefactor": res.prefactor, "stderr": res.exponent_stderr,
                        "exponent_iqr": res.exponent_iqr, "prefactor_iqr": res.prefactor_iqr,
                        "window": [t_end / 100.0, t_end], "n_used": res.n_used,
                        "excluded_paths": res.excluded_paths}
            elif name == "angle_diagnostics":
                res = asy.angle_stabilization_diagnostics(ens.trajectories)
                write_csv(out / "angle_diagnostics.csv", "T,median_increment", res.medians)
                body = {"medians": res.medians, "n_used": res.n_used, "excluded_paths": res.excluded_paths}
                if sc.angle_spec is not None:
                    body["conditions"] = asdict(asy.check_angle_conditions(sc.angle_spec))
            else:
                sched = cfg.schedule()
                ode_sched = integ.StepSchedule(t_end=t_end, dt_max=min(cfg.ode_dt, sched.dt_max),
                                               checkpoint_times=tuple(sched.times.tolist()))
                ode = integ.simulate_ode_skeleton(sc.system, np.asarray(sc.x0), ode_sched)
                res = asy.sde_ode_equivalence(ens.trajectories, ode)
                write_csv(out / "sde_ode_equivalence.csv", "t,median_ratio", zip(res.times, res.ratios))
                body = {"last_decade_median": res.last_decade_median, "deviation": res.deviation,
                        "excluded_paths": res.excluded_paths}
        except asy.EstimatorError as exc:
            report["failures"].append({"estimator": name, "error": str(exc)})
            print(f"analysis failed in {name}: {exc}", file=sys.stderr)
            continue
        body["checks"] = _analysis_checks(sc, name, res)
        report["estimators"][name] = body
        for c in body["checks"]:
            if not c["passed"]:
                report["failures"].append({"estimator": name, "check": c["check"]})
                print(f"analysis check failed in {name}: {c}", file=sys.stderr)
    report["passed"] = not report["failures"]
    write_json(out / "analysis.json", report)
    return EXIT_OK if report["passed"] else EXIT_ANALYSIS


def cmd_report(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    files = sorted(p for p in out.glob("*.json")) if out.is_dir() else []
    if not files:
        raise ConfigError(f"out: no JSON reports found in {out}")
    parts = ["# sdeasym report", ""]
    for p in files:
        doc = json.loads(p.read_text())
        parts += [f"## {p.name}", "", "```json", json.dumps(doc, sort_keys=True, indent=2), "```", ""]
    (out / "report.md").write_text("\n".join(parts))
    return EXIT_OK


# -- argument handling ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdeasym", description="Radius/angle asymptotics of SDEs.")
    p.add_argument("command", choices=COMMANDS)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", help="registered scenario name, e.g. 'power_drift:n=2,alpha=0.5'")
    src.add_argument("--config", help="TOML scenario config file")
    p.add_argument("--paths", type=int, help="number of Monte Carlo paths (default 64)")
    p.add_argument("--t-end", type=float, help="final time (default 10000)")
    p.add_argument("--dt-max", type=float, help="largest step (default t_end/1000)")
    p.add_argument("--rel-step", type=float, help="relative step scale epsilon (default 0.01)")
    p.add_argument("--seed", type=int, help=f"base seed (overridden by ${SEED_ENV})")
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    p.add_argument("--save-paths", type=int, help="number of path CSVs to write (default 4)")
    p.add_argument("--representation", choices=("cartesian", "polar"))
    p.add_argument("--r-floor", type=float, help="radius floor (default 1e-3)")
    p.add_argument("--analyses", help=f"comma-separated subset of {','.join(ANALYSES)}")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


_RUN_KEYS = {
    "paths": ("n_paths", int), "t_end": ("t_end", float), "dt_max": ("dt_max", float),
    "dt_min": ("dt_min", float), "rel_step": ("relative_scale", float), "save_paths": ("save_paths", int),
    "representation": ("representation", str), "r_floor": ("r_floor", float), "ode_dt": ("ode_dt", float),
}


def resolve(args: argparse.Namespace, env=None) -> tuple[RunConfig, scn.Scenario | None]:
    env = os.environ if env is None else env
    cfg = RunConfig(command=args.command, out_dir=args.out, threads=args.threads)
    sc = None
    file_seed = None
    if args.config:
        path = Path(args.config)
        try:
            cfg.config_bytes = path.read_bytes()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from exc
        try:
            sc, raw = scn.read_config(path)
        except scn.ConfigError as exc:
            raise ConfigError(f"scenario: {exc}") from exc
        cfg.config_path = str(path)
        table = raw.get("scenario", raw)
        file_seed = table.get("seed")
        for key, val in raw.get("run", {}).items():
            if key == "seed":
                file_seed = val
                continue
            if key == "analyses":
                cfg.analyses = tuple(val)
                continue
            if key not in _RUN_KEYS:
                raise ConfigError(f"run.{key}: unknown field")
            attr, typ = _RUN_KEYS[key]
            try:
                setattr(cfg, attr, typ(val))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"run.{key}: {exc}") from exc
    elif args.scenario:
        cfg.scenario = args.scenario
        cfg.config_bytes = args.scenario.encode()
        try:
            sc = scn.registry_lookup(args.scenario)
        except scn.UnknownScenarioError as exc:
            raise ConfigError(f"scenario: {exc}") from exc
    elif args.command != "report":
        raise ConfigError("scenario: no scenario given (use --scenario NAME or --config PATH)")

    for opt, (attr, typ) in _RUN_KEYS.items():
        val = getattr(args, opt, None)
        if val is not None:
            setattr(cfg, attr, typ(val))
    if args.analyses:
        cfg.analyses = tuple(a.strip() for a in args.analyses.split(",") if a.strip())

    seed = file_seed if file_seed is not None else 0
    if args.seed is not None:
        seed = args.seed
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"seed: {SEED_ENV}={env[SEED_ENV]!r} is not an integer") from exc
    cfg.base_seed = int(seed)
    cfg.validate()
    return cfg, sc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg, sc = resolve(args)
        if cfg.command == "report":
            return cmd_report(cfg)
        handler = {"simulate": cmd_simulate, "certify": cmd_certify, "analyze": cmd_analyze}[cfg.command]
        return handler(cfg, sc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except integ.SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
