"""Experiment configuration and orchestration: simulate, speed sweep, covering,
stationary profiles and verification of stored trajectories."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import linregress

from . import diagnostics as dg
from .evolve import (BlowUpError, Integrator, Trajectory, energy_identity_residual,
                     load_trajectory, save_trajectory, simulate)
from .frontset import (Covering, confine, confined_cover_front_set, covering_verdict, crossings,
                       front_set)
from .grid import Field, Grid1D, energy_density, integrate, read_field_csv
from .initial import domain_for, kink, multi_front, noisy_well
from .potential import Potential, get_potential, well_constants
from .stationary import shoot_heteroclinic


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; ``line`` points into the file when known."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        super().__init__(message)
        self.line = line
        self.column = column

    def render(self, source: str = "config") -> str:
        loc = source
        if self.line is not None:
            loc += f":{self.line}"
            if self.column is not None:
                loc += f":{self.column}"
        return f"{loc}: {self.args[0]}"


INITIAL_TYPES = ("kink", "kink-antikink", "multi-front", "random-smooth")
KNOWN_KEYS = {"potential", "eps", "h", "h_over_eps", "dt", "domain", "pad", "initial", "t_end",
              "snapshot_dt", "boundary", "output", "seed", "checks", "separations", "window",
              "R_over_eps", "name"}


@dataclass
class ExperimentConfig:
    potential: dict
    eps: float
    h: float
    initial: dict
    t_end: float
    snapshot_dt: Optional[float] = None
    dt: Optional[float] = None
    domain: Optional[tuple] = None
    pad: float = 20.0
    boundary: str = "clamped"
    output: Optional[str] = None
    seed: int = 0
    checks: list = field(default_factory=list)
    separations: list = field(default_factory=list)
    window: dict = field(default_factory=dict)
    R_over_eps: float = 10.0
    raw: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.raw)


def _line_of(text: str, key: str) -> Optional[int]:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, e.lineno, e.colno) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", 1, 1)
    for k in raw:
        if k not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {k!r}", _line_of(text, k))

    def need(k):
        if k not in raw:
            raise ConfigError(f"missing required key {k!r}")
        return raw[k]

    def positive(k, v):
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigError(f"{k!r} must be a positive number", _line_of(text, k))
        return float(v)

    pot = raw.get("potential", {"name": "quartic"})
    if isinstance(pot, str):
        pot = {"name": pot}
    if not isinstance(pot, dict) or "name" not in pot:
        raise ConfigError("'potential' must name a potential", _line_of(text, "potential"))
    try:
        get_potential(pot["name"], pot.get("params"))
    except (KeyError, ValueError) as e:
        raise ConfigError(f"potential: {e}", _line_of(text, "potential")) from None
    eps = positive("eps", need("eps"))
    if "h" in raw:
        h = positive("h", raw["h"])
    else:
        h = eps / positive("h_over_eps", raw.get("h_over_eps", 8))
    init = raw.get("initial", {"type": "kink"})
    if isinstance(init, str):
        init = {"type": init}
    if not isinstance(init, dict) or init.get("type") not in INITIAL_TYPES:
        raise ConfigError(f"'initial.type' must be one of {', '.join(INITIAL_TYPES)}",
                          _line_of(text, "initial"))
    t_end = positive("t_end", need("t_end"))
    boundary = raw.get("boundary", "clamped")
    if boundary not in ("clamped", "neumann"):
        raise ConfigError("'boundary' must be 'clamped' or 'neumann'", _line_of(text, "boundary"))
    dom = raw.get("domain")
    if dom is not None:
        if not (isinstance(dom, list) and len(dom) == 2 and dom[0] < dom[1]):
            raise ConfigError("'domain' must be [x_min, x_max]", _line_of(text, "domain"))
        dom = (float(dom[0]), float(dom[1]))
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("'seed' must be an integer", _line_of(text, "seed"))
    return ExperimentConfig(
        potential=pot, eps=eps, h=h, initial=init, t_end=t_end,
        snapshot_dt=positive("snapshot_dt", raw["snapshot_dt"]) if "snapshot_dt" in raw else None,
        dt=positive("dt", raw["dt"]) if "dt" in raw else None, domain=dom,
        pad=positive("pad", raw.get("pad", 20.0)), boundary=boundary, output=raw.get("output"),
        seed=seed, checks=list(raw.get("checks", [])), separations=list(raw.get("separations", [])),
        window=dict(raw.get("window", {})), R_over_eps=positive("R_over_eps", raw.get("R_over_eps", 10.0)),
        raw=raw)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def front_positions_for(init: dict, eps: float) -> list:
    t = init["type"]
    if t == "kink":
        return [float(init.get("center", 0.0))]
    if t == "kink-antikink":
        d = float(init["separation"]) if "separation" in init else float(init["separation_over_eps"]) * eps
        c = float(init.get("center", 0.0))
        return [c - d / 2, c + d / 2]
    if t == "multi-front":
        return [float(v) for v in init["positions"]]
    return [0.0]


def build_initial(cfg: ExperimentConfig, p: Potential) -> Field:
    eps, init = cfg.eps, cfg.initial
    pos = front_positions_for(init, eps)
    if cfg.domain is not None:
        grid = Grid1D.around(cfg.domain[0], cfg.domain[1], cfg.h)
    else:
        grid = domain_for(pos, eps, cfg.h, cfg.pad)
    t = init["type"]
    if p.dim_k != 1 and t != "random-smooth":
        raise ConfigError("named front data are defined for scalar potentials")
    if t == "kink":
        return kink(grid, eps, pos[0])
    if t in ("kink-antikink", "multi-front"):
        return multi_front(grid, eps, pos)
    well = p.minimizers[int(init.get("well", 0))]
    amp = float(init.get("amplitude", 0.05))
    u = noisy_well(grid, eps, well, amp, cfg.seed)
    cap = init.get("energy_cap")
    if cap is not None:
        def energy_at(s):
            v = u.with_values(well + s * (u.values - well))
            return integrate(energy_density(v, p).energy, grid) - cap
        if energy_at(1.0) > 0:
            # energy is not quadratic in the amplitude, so solve for the scale
            s = brentq(energy_at, 0.0, 1.0, xtol=1e-14, rtol=1e-13)
            u = u.with_values(well + s * (u.values - well))
    return u


# ---------------------------------------------------------------- front metrics

def mid_level(p: Potential) -> float:
    return float(np.mean(p.minimizers[:, 0]))


def front_count_series(tr: Trajectory, level: float) -> list:
    return [len(crossings(tr.snapshot(i), level)) for i in range(len(tr))]


def front_metrics(tr: Trajectory) -> dict:
    p = tr.potential
    out: dict = {}
    if p.dim_k != 1:
        return out
    lvl = mid_level(p) if p.q == 2 else 0.5 * (p.minimizers[0, 0] + p.minimizers[1, 0])
    xs = [crossings(tr.snapshot(i), lvl) for i in range(len(tr))]
    counts = [len(c) for c in xs]
    out["front_count"] = counts
    out["level"] = lvl
    if counts[0] > 0 and all(c == counts[0] for c in counts):
        disp = max(float(np.max(np.abs(c - xs[0]))) for c in xs)
        out["front_displacement"] = disp
    events = []
    for i in range(1, len(counts)):
        if counts[i] != counts[i - 1]:
            events.append({"t": float(tr.times[i]), "from": counts[i - 1], "to": counts[i]})
    out["count_changes"] = events
    out["annihilation"] = any(e["to"] < e["from"] for e in events)
    return out


def energy_identity_verdict(tr: Trajectory, rtol: float = 1e-3) -> dg.Verdict:
    """Worst residual of the energy identity over [0, t_i] for every snapshot i."""
    res = max(energy_identity_residual(tr, 0, i) for i in range(len(tr)))
    rhs = rtol * abs(tr.energy0)
    return dg.Verdict("energy_identity", {"rtol": rtol}, res, rhs, bool(res <= rhs))


def run_simulation(cfg: ExperimentConfig) -> tuple:
    p = get_potential(cfg.potential["name"], cfg.potential.get("params"))
    wc = well_constants(p)
    u0 = build_initial(cfg, p)
    it = Integrator(cfg.dt, cfg.boundary) if cfg.dt else Integrator.for_field(u0, wc, cfg.boundary)
    tr = simulate(u0, p, it, cfg.t_end, snapshot_dt=cfg.snapshot_dt, wc=wc)
    return tr, p, wc


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def cmd_simulate(cfg: ExperimentConfig, out_dir) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        tr, p, wc = run_simulation(cfg)
    except BlowUpError as e:
        tr = getattr(e, "trajectory", None)
        if tr is not None:
            save_trajectory(tr, out, cfg.to_dict())
        write_json(out / "verdicts.json", {"report": [], "checks": [
            {"check": "blowup", "params": {}, "lhs": None, "rhs": None, "pass": False,
             "message": str(e)}]})
        return 1
    # the energy identity and containment records are always written; only
    # checks requested in the config decide the exit code
    report = [energy_identity_verdict(tr).to_dict(),
              dg.containment_check(tr, wc, cfg.R_over_eps * cfg.eps).to_dict()]
    requested = []
    for name in cfg.checks:
        requested.extend(v.to_dict() for v in run_check(tr, wc, name))
    tr.meta["front_metrics"] = front_metrics(tr)
    save_trajectory(tr, out, cfg.to_dict())
    write_json(out / "verdicts.json", {"report": report, "checks": requested})
    return 0 if all(v["pass"] for v in requested) else 1


# ---------------------------------------------------------------- speed sweep

@dataclass
class SweepRow:
    d_over_eps: float
    sep_over_eps: float
    speed: float
    censored: bool
    containment: bool


def pair_speed(tr: Trajectory, level: float, t_lo: float, t_hi: float) -> tuple:
    """Separation at the window centre and the mean speed of one front over the
    window, from interpolated crossings; None when a crossing pair is missing."""
    ilo, ihi = tr.index_at(t_lo), tr.index_at(t_hi)
    imid = tr.index_at(0.5 * (t_lo + t_hi))
    seps = []
    for i in (ilo, imid, ihi):
        c = crossings(tr.snapshot(i), level)
        if len(c) != 2:
            return None, None
        seps.append(c[1] - c[0])
    W = tr.times[ihi] - tr.times[ilo]
    return seps[1], (seps[0] - seps[2]) / (2.0 * W)


def sweep_noise_floor(p: Potential, wc, eps: float, h: float, t_end: float, W: float,
                      pad: float) -> float:
    """Apparent speed of an isolated stationary kink under identical numerics."""
    u0 = kink(domain_for([0.0], eps, h, pad), eps)
    tr = simulate(u0, p, Integrator.for_field(u0, wc), t_end, snapshot_dt=W / 2, wc=wc)
    lvl = mid_level(p)
    c0 = crossings(tr.snapshot(tr.index_at(t_end - W)), lvl)
    c1 = crossings(tr.snapshot(len(tr) - 1), lvl)
    if len(c0) != 1 or len(c1) != 1:
        return math.inf
    return abs(float(c1[0] - c0[0])) / W


def speed_sweep(p: Potential, eps: float, separations: Sequence[float], h: float,
                t_center: float = 0.05, width: float = 0.02, pad: float = 20.0,
                R: Optional[float] = None, keep: bool = False) -> dict:
    """Kink-antikink speed against separation (separations in units of eps)."""
    if p.dim_k != 1:
        raise ValueError("speed sweep needs a scalar potential")
    if len(separations) < 3:
        raise ValueError("need at least three separations")
    wc = well_constants(p)
    t_end = t_center + width / 2
    R = 10 * eps if R is None else R
    floor = 10.0 * sweep_noise_floor(p, wc, eps, h, t_end, width, pad)
    lvl = mid_level(p)
    rows, trajs = [], []
    for dd in separations:
        u0 = multi_front(domain_for([-dd * eps / 2, dd * eps / 2], eps, h, pad), eps,
                         [-dd * eps / 2, dd * eps / 2])
        tr = simulate(u0, p, Integrator.for_field(u0, wc), t_end, snapshot_dt=width / 2, wc=wc)
        sep, v = pair_speed(tr, lvl, t_center - width / 2, t_center + width / 2)
        cont = dg.containment_check(tr, wc, R).passed
        if sep is None:
            rows.append(SweepRow(float(dd), math.nan, math.nan, True, bool(cont)))
        else:
            rows.append(SweepRow(float(dd), float(sep / eps), float(v), not bool(v > floor), bool(cont)))
        if keep:
            trajs.append(tr)
    used = [r for r in rows if not r.censored]
    fit = None
    if len(used) >= 2:
        lr = linregress([r.sep_over_eps for r in used], [math.log(r.speed) for r in used])
        lr_nom = linregress([r.d_over_eps for r in used], [math.log(r.speed) for r in used])
        fit = {"slope": float(lr.slope), "intercept": float(lr.intercept),
               "r2": float(lr.rvalue ** 2), "nominal_slope": float(lr_nom.slope),
               "nominal_r2": float(lr_nom.rvalue ** 2), "n": len(used)}
    out = {"rows": rows, "fit": fit, "noise_floor": floor, "eps": eps, "h": h,
           "window": {"center": t_center, "width": width}, "R": R}
    if keep:
        out["trajectories"] = trajs
    return out


def write_sweep(result: dict, out_dir, config: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["d_over_eps,sep_over_eps,speed,censored,containment"]
    for r in result["rows"]:
        lines.append(f"{r.d_over_eps!r},{r.sep_over_eps!r},{r.speed!r},{int(r.censored)},{int(r.containment)}")
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    rep = {k: v for k, v in result.items() if k not in ("rows", "trajectories")}
    rep["config"] = config
    write_json(out / "fit.json", rep)


def cmd_speed_sweep(cfg: ExperimentConfig, out_dir) -> int:
    p = get_potential(cfg.potential["name"], cfg.potential.get("params"))
    seps = cfg.separations or [6, 8, 10, 12]
    res = speed_sweep(p, cfg.eps, seps, cfg.h, float(cfg.window.get("center", 0.05)),
                      float(cfg.window.get("width", 0.02)), cfg.pad, cfg.R_over_eps * cfg.eps)
    write_sweep(res, out_dir, cfg.to_dict())
    return 0 if res["fit"] is not None and all(r.containment for r in res["rows"]) else 1


# ---------------------------------------------------------------- covering / stationary

def read_points(path) -> list:
    text = Path(path).read_text().strip()
    if text.startswith("["):
        return [float(v) for v in json.loads(text)]
    return [float(tok) for tok in re.split(r"[,\s]+", text) if tok]


def cmd_covering(points_path: Optional[str], field_path: Optional[str], delta: float, kappa: float,
                 eps: Optional[float], potential: str, M0: Optional[float], out_path: Optional[str]) -> dict:
    if points_path:
        S = read_points(points_path)
        cov = confine(S, delta, kappa)
        verdict = covering_verdict(cov, S)
        rep = {"mode": "points", "input": S}
    else:
        if eps is None:
            raise ConfigError("--eps is required with --field")
        p = get_potential(potential)
        wc = well_constants(p)
        u = read_field_csv(field_path, eps)
        M = M0 if M0 is not None else max(integrate(energy_density(u, p).energy, u.grid), wc.eta0)
        cov = confined_cover_front_set(u, wc, delta, kappa, eps, M)
        verdict = covering_verdict(cov, front_set(u, wc).intervals)
        rep = {"mode": "field", "M0": M}
    rep.update({"covering": json.loads(cov.to_json()), "verdict": verdict,
                "params": {"delta": delta, "kappa": kappa}})
    if out_path:
        write_json(Path(out_path), rep)
    return rep


def cmd_stationary(potential: str, params: Optional[dict], eps: float, well_from: int, well_to: int,
                   out_dir) -> dict:
    p = get_potential(potential, params)
    prof = shoot_heteroclinic(p, eps, well_from, well_to)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prof.to_csv(out / "profile.csv")
    tails = prof.tail_directions(p)
    rep = {"potential": p.spec(), "eps": eps, "wells": [well_from, well_to],
           "energy": prof.energy(p), "discrepancy_max": prof.discrepancy_max,
           "tail_directions": [None if t is None else t.tolist() for t in tails],
           "meta": prof.meta}
    write_json(out / "stationary.json", rep)
    return rep


# ---------------------------------------------------------------- verify

CHECKS = ("energy_identity", "energy_consistency", "monotone_energy", "containment",
          "front_tracker", "stationarity")


def run_check(tr: Trajectory, wc, name: str) -> list:
    if name == "energy_identity":
        return [energy_identity_verdict(tr)]
    if name == "energy_consistency":
        stored = np.asarray(tr.meta.get("stored_energies", tr.energy_series))
        dev = float(np.max(np.abs(stored - tr.energy_series)))
        rhs = 1e-9 * max(1.0, abs(tr.energy0))
        return [dg.Verdict("energy_consistency", {}, dev, rhs, dev <= rhs)]
    if name == "monotone_energy":
        inc = float(np.max(np.diff(tr.energy_series))) if len(tr) > 1 else 0.0
        rhs = 1e-12 * max(1.0, abs(tr.energy0))
        return [dg.Verdict("monotone_energy", {}, inc, rhs, inc <= rhs)]
    if name == "containment":
        return [dg.containment_check(tr, wc, 10 * tr.eps)]
    if name == "front_tracker":
        M0 = max(tr.energy0, wc.eta0)
        c = dg.make_constants(M0, wc)
        log = dg.front_tracker(tr, wc, c, 2 * tr.eps / c.kappa0 * (1 + 1e-6))
        ok = log.containment_ok and log.increments_ok and log.within_ceiling
        return [dg.Verdict("front_tracker", {"M0": M0}, float(len(log.stages)), log.stage_ceiling, ok,
                           {"cases": [s.case for s in log.stages]})]
    if name == "stationarity":
        m = front_metrics(tr)
        disp = m.get("front_displacement", math.inf)
        return [dg.Verdict("stationarity", {"h": tr.grid.h}, disp, tr.grid.h, disp <= tr.grid.h)]
    raise ConfigError(f"unknown check {name!r}; choose from {', '.join(CHECKS)}")


def cmd_verify(directory, checks: Sequence[str]) -> tuple:
    d = Path(directory)
    if not (d / "manifest.json").exists():
        raise FileNotFoundError(f"no manifest.json in {d}")
    tr = load_trajectory(d, recompute_energy=True)
    wc = well_constants(tr.potential)
    names = list(checks) or ["energy_identity", "energy_consistency", "monotone_energy"]
    verdicts = []
    for n in names:
        verdicts.extend(v.to_dict() for v in run_check(tr, wc, n))
    ok = all(v["pass"] for v in verdicts)
    return ok, verdicts
