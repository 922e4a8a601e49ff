"""Configuration files: TOML or JSON, with recoil-unit suffixes.

Quantities are plain numbers (SI) or strings ``"<value> <unit>"``. Units
resolved against the species: ``wr`` (ω_r), ``hk`` (ħk), ``vr`` (v_r),
``k`` and ``lambda``; products such as ``"20 vr*ms"`` are allowed. ``Hz``
means an ordinary frequency and is converted to rad/s.
Every loaded file is normalised to a canonical dictionary of SI floats;
that dictionary is what manifests store, so re-reading a manifest gives
the same specification bit for bit.
"""

from __future__ import annotations

import copy
import json
import math
import re
import sys
from pathlib import Path

from scipy import constants

from .errors import ConfigurationError
from .grid import HBAR, Grid, Species, grid_for_spacing, rubidium87
from .potentials import BlochTerm, GravityTerm, LatticeTerm, PulseEnvelope
from .propagator import COMPOSITIONS, SCHEME_ORDERS, MeanField, StepScheme
from .sequences import (
    FRAMES,
    InitialState,
    Measurement,
    PulseSpec,
    SequenceSpec,
    _per_lambda,
    auto_grid,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

_NUM = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/0-9_^*]*)\s*$")

_FIXED_UNITS = {
    "": 1.0,
    "m": 1.0, "mm": 1e-3, "um": 1e-6, "nm": 1e-9,
    "s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9,
    "kg": 1.0, "u": constants.atomic_mass,
    "rad": 1.0, "mrad": 1e-3, "pi": math.pi,
    "rad/s": 1.0, "1/s": 1.0, "Hz": 2 * math.pi, "kHz": 2e3 * math.pi,
    "1/s2": 1.0, "1/s^2": 1.0, "m/s": 1.0, "m/s2": 1.0,
    "1/m": 1.0,
}

SCHEMA = {
    "label", "kind", "T", "frame", "phi0", "t_start",
    "species", "grid", "initial_state", "pulses", "measurement", "numerics",
    "mean_field", "gravity", "fringe", "calibration", "gradiometer", "convergence", "imbalance",
    "benchmark",
}


# ---------------------------------------------------------------------------
# quantities


def quantity(value, path: str, species: Species | None = None, extra: dict | None = None) -> float:
    """Convert a number or ``"<value> <unit>"`` string to SI."""
    if isinstance(value, bool):
        raise ConfigurationError(f"expected a number, got {value!r}", path)
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        m = _NUM.match(value)
        if not m:
            raise ConfigurationError(f"cannot parse quantity {value!r}", path)
        num, unit = float(m.group(1)), m.group(2)
        scale = _unit_scale(unit, species, extra)
        if scale is None:
            raise ConfigurationError(f"unknown unit {unit!r}", path)
        out = num * scale
    else:
        raise ConfigurationError(f"expected a number or quantity string, got {type(value).__name__}", path)
    if not math.isfinite(out):
        raise ConfigurationError("value must be finite", path)
    return out


def _unit_scale(unit, species, extra):
    if "*" in unit:
        # products such as "vr*ms"
        scale = 1.0
        for part in unit.split("*"):
            s = _unit_scale(part, species, extra) if part else None
            if s is None:
                return None
            scale *= s
        return scale
    if unit in _FIXED_UNITS:
        return _FIXED_UNITS[unit]
    if extra and unit in extra:
        return extra[unit]
    if species is not None:
        recoil = {
            "wr": species.omega_r,
            "hk": species.hbar_k,
            "vr": species.v_r,
            "lambda": species.lambda_light,
            "k": species.k,
        }
        return recoil.get(unit)
    return None


# ---------------------------------------------------------------------------
# reading


def read_config(path) -> dict:
    """Raw dictionary from a TOML file, a JSON config or a run manifest."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}", "config") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"parse error: {exc}", "config") from exc
    if "config" in data and isinstance(data["config"], dict) and "manifest_version" in data:
        data = data["config"]
    return data


def load_config(path) -> dict:
    return normalize(read_config(path))


def _table(raw: dict, key: str) -> dict:
    val = raw.get(key, {})
    if not isinstance(val, dict):
        raise ConfigurationError("expected a table", key)
    return val


def _check_keys(table: dict, allowed: set, where: str):
    for k in table:
        if k not in allowed:
            raise ConfigurationError(f"unknown key {k!r}", f"{where}.{k}" if where else k)


def _species(raw: dict) -> Species:
    t = _table(raw, "species")
    _check_keys(t, {"name", "mass", "lambda", "a_s"}, "species")
    base = rubidium87()
    lam = quantity(t.get("lambda", base.lambda_light), "species.lambda")
    mass = quantity(t.get("mass", base.mass), "species.mass")
    a_s = quantity(t.get("a_s", base.a_s), "species.a_s")
    if not (lam > 0 and mass > 0 and a_s >= 0):
        raise ConfigurationError("lambda and mass must be positive, a_s >= 0", "species")
    return Species(mass, lam, a_s, str(t.get("name", base.name)))


def normalize(raw: dict) -> dict:
    """Validate ``raw`` and return the canonical SI dictionary."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a table", "config")
    _check_keys(raw, SCHEMA, "")
    sp = _species(raw)
    q = lambda v, p, extra=None: quantity(v, p, sp, extra)  # noqa: E731
    out: dict = {
        "label": str(raw.get("label", "")),
        "kind": str(raw.get("kind", "custom")),
        "frame": _choice(raw.get("frame", "lab"), FRAMES, "frame"),
        "species": {"name": sp.name, "mass": sp.mass, "lambda": sp.lambda_light, "a_s": sp.a_s},
    }
    if "T" in raw:
        out["T"] = q(raw["T"], "T")
    out["phi0"] = q(raw.get("phi0", 0.0), "phi0")
    if raw.get("t_start") is not None:
        out["t_start"] = q(raw["t_start"], "t_start")

    # numerics
    num = _table(raw, "numerics")
    _check_keys(num, {"scheme", "dt_interaction", "dt_free", "composition"}, "numerics")
    out["numerics"] = {
        "scheme": _choice(num.get("scheme", "strang"), SCHEME_ORDERS, "numerics.scheme"),
        "dt_interaction": q(num.get("dt_interaction", 1e-6), "numerics.dt_interaction"),
        "dt_free": q(num.get("dt_free", 1e-5), "numerics.dt_free"),
        "composition": _choice(num.get("composition", "ruth"), COMPOSITIONS, "numerics.composition"),
    }

    # initial state
    ini = _table(raw, "initial_state")
    _check_keys(ini, {"kind", "sigma_p", "x0", "p0", "omega_x", "tol"}, "initial_state")
    kind = _choice(ini.get("kind", "gaussian"), ("gaussian", "bec"), "initial_state.kind")
    out["initial_state"] = {
        "kind": kind,
        "sigma_p": q(ini.get("sigma_p", 0.0), "initial_state.sigma_p"),
        "x0": q(ini.get("x0", 0.0), "initial_state.x0"),
        "p0": q(ini.get("p0", 0.0), "initial_state.p0"),
        "omega_x": q(ini.get("omega_x", 0.0), "initial_state.omega_x"),
        "tol": q(ini.get("tol", 1e-13), "initial_state.tol"),
    }

    # mean field
    if "mean_field" in raw:
        mf = _table(raw, "mean_field")
        _check_keys(mf, {"g1d", "a_eff", "omega_perp", "n_atoms"}, "mean_field")
        if "n_atoms" not in mf:
            raise ConfigurationError("n_atoms is required", "mean_field.n_atoms")
        n_atoms = q(mf["n_atoms"], "mean_field.n_atoms")
        if "g1d" in mf:
            g1d = q(mf["g1d"], "mean_field.g1d")
        else:
            extra = {"a_s": sp.a_s}
            for key in ("a_eff", "omega_perp"):
                if key not in mf:
                    raise ConfigurationError("give g1d or both a_eff and omega_perp", f"mean_field.{key}")
            a_eff = q(mf["a_eff"], "mean_field.a_eff", extra)
            g1d = MeanField.from_waveguide(a_eff, q(mf["omega_perp"], "mean_field.omega_perp"), n_atoms).g1d
        out["mean_field"] = {"g1d": g1d, "n_atoms": n_atoms}

    # gravity
    if "gravity" in raw:
        gr = _table(raw, "gravity")
        _check_keys(gr, {"g", "gamma", "x_origin"}, "gravity")
        out["gravity"] = {
            "g": q(gr.get("g", 0.0), "gravity.g"),
            "gamma": q(gr.get("gamma", 0.0), "gravity.gamma"),
            "x_origin": q(gr.get("x_origin", 0.0), "gravity.x_origin"),
        }

    # pulses
    pulses = raw.get("pulses", [])
    if not isinstance(pulses, list):
        raise ConfigurationError("expected an array of tables", "pulses")
    out["pulses"] = [_pulse(p, i, sp) for i, p in enumerate(pulses)]

    # measurement
    me = _table(raw, "measurement")
    _check_keys(
        me,
        {"mode", "ports", "x_ref", "t_ref", "tof", "half_width", "bin_width", "phase_pulse", "n_order",
         "plus_port", "floor", "parasitic_radius", "min_separation_sigmas"},
        "measurement",
    )
    ports = me.get("ports", ["0 hk", "2 hk"])
    if not isinstance(ports, list) or not ports:
        raise ConfigurationError("ports must be a non-empty array", "measurement.ports")
    out["measurement"] = {
        "mode": _choice(me.get("mode", "position"), ("position", "momentum"), "measurement.mode"),
        "ports": [q(p, f"measurement.ports[{i}]") for i, p in enumerate(ports)],
        "x_ref": q(me.get("x_ref", 0.0), "measurement.x_ref"),
        "t_ref": q(me.get("t_ref", 0.0), "measurement.t_ref"),
        "tof": q(me.get("tof", 0.0), "measurement.tof"),
        "half_width": None if me.get("half_width") is None else q(me["half_width"], "measurement.half_width"),
        "bin_width": None if me.get("bin_width") is None else q(me["bin_width"], "measurement.bin_width"),
        "phase_pulse": _int(me.get("phase_pulse", -1), "measurement.phase_pulse"),
        "n_order": _int(me.get("n_order", 1), "measurement.n_order"),
        "plus_port": _int(me.get("plus_port", 0), "measurement.plus_port"),
        "floor": q(me.get("floor", 0.5), "measurement.floor"),
        "parasitic_radius": None if me.get("parasitic_radius") is None
        else q(me["parasitic_radius"], "measurement.parasitic_radius"),
        "min_separation_sigmas": q(me.get("min_separation_sigmas", 4.0), "measurement.min_separation_sigmas"),
    }

    # optional command sections
    for key, fn in (
        ("fringe", _fringe), ("calibration", _calibration), ("gradiometer", _gradiometer),
        ("convergence", _convergence), ("imbalance", _imbalance), ("benchmark", _benchmark),
    ):
        if key in raw:
            out[key] = fn(_table(raw, key), sp, out)

    # grid last: the automatic choice needs the pulses and ports
    out["grid"] = _grid(_table(raw, "grid"), sp, out)
    return out


def _choice(v, allowed, path):
    if v not in allowed:
        raise ConfigurationError(f"{v!r} is not one of {', '.join(allowed)}", path)
    return str(v)


def _int(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigurationError(f"expected an integer, got {v!r}", path)
    return int(v)


_LATTICE_KEYS = {"type", "envelope", "omega", "tau", "center", "truncation", "rise", "k", "velocity", "phase",
                 "x_origin", "direction"}
_BLOCH_KEYS = {"type", "omega", "k", "v_start", "n_bloch", "tau_al", "tau_bo", "tau_aul", "t_start", "v_recoil",
               "x_start", "phase", "x_origin"}


def _require(t: dict, keys, path):
    for req in keys:
        if req not in t:
            raise ConfigurationError("missing required key", f"{path}.{req}")


def _nonneg(t: dict, names, path):
    for name in names:
        if name in t and not t[name] >= 0:
            raise ConfigurationError("must be >= 0", f"{path}.{name}")
    return t


def _lattice_term(t: dict, path: str, sp: Species, order: int) -> dict:
    q = lambda v, name: quantity(v, f"{path}.{name}", sp)  # noqa: E731
    _require(t, ("omega", "tau", "center"), path)
    direction = _int(t.get("direction", 1), f"{path}.direction")
    if direction not in (1, -1):
        raise ConfigurationError("direction must be +1 or -1", f"{path}.direction")
    return _nonneg({
        "type": "lattice",
        "envelope": str(t.get("envelope", "gaussian")),
        "omega": q(t["omega"], "omega"),
        "tau": q(t["tau"], "tau"),
        "center": q(t["center"], "center"),
        "truncation": q(t.get("truncation", 4.0), "truncation"),
        "rise": None if t.get("rise") is None else q(t["rise"], "rise"),
        "k": q(t.get("k", sp.k), "k"),
        "velocity": q(t.get("velocity", order * sp.v_r), "velocity"),
        "phase": q(t.get("phase", 0.0), "phase"),
        "x_origin": q(t.get("x_origin", 0.0), "x_origin"),
        "direction": direction,
    }, ("omega", "tau"), path)


def _bloch_term(t: dict, path: str, sp: Species) -> dict:
    q = lambda v, name: quantity(v, f"{path}.{name}", sp)  # noqa: E731
    _require(t, ("omega", "v_start", "n_bloch", "t_start", "tau_al", "tau_bo", "tau_aul"), path)
    v_start, t_start = q(t["v_start"], "v_start"), q(t["t_start"], "t_start")
    return _nonneg({
        "type": "bloch",
        "omega": q(t["omega"], "omega"),
        "k": q(t.get("k", sp.k), "k"),
        "v_start": v_start,
        "n_bloch": _int(t["n_bloch"], f"{path}.n_bloch"),
        "tau_al": q(t["tau_al"], "tau_al"),
        "tau_bo": q(t["tau_bo"], "tau_bo"),
        "tau_aul": q(t["tau_aul"], "tau_aul"),
        "t_start": t_start,
        "v_recoil": q(t.get("v_recoil", sp.v_r), "v_recoil"),
        # the lattice starts where a packet moving with it would be
        "x_start": q(t.get("x_start", v_start * t_start), "x_start"),
        "phase": q(t.get("phase", 0.0), "phase"),
        "x_origin": q(t.get("x_origin", 0.0), "x_origin"),
    }, ("omega", "tau_al", "tau_bo", "tau_aul"), path)


def _term(t, path, sp, order):
    if not isinstance(t, dict):
        raise ConfigurationError("expected a table", path)
    typ = str(t.get("type", "lattice"))
    if typ == "lattice":
        _check_keys(t, _LATTICE_KEYS, path)
        return _lattice_term(t, path, sp, order)
    if typ == "bloch":
        _check_keys(t, _BLOCH_KEYS, path)
        return _bloch_term(t, path, sp)
    raise ConfigurationError(f"unknown term type {typ!r}", f"{path}.type")


def _pulse(p: dict, i: int, sp: Species) -> dict:
    """One pulse: either explicit ``terms`` or a single compact term.

    Compact lattice pulses accept ``pair = true`` (two counter-moving
    lattices whose phases vanish at the pulse centre) and ``delta_k`` (a
    change of the effective wave vector 2n·k).
    """
    path = f"pulses[{i}]"
    if not isinstance(p, dict):
        raise ConfigurationError("expected a table", path)
    order = _int(p.get("order", 1), f"{path}.order")
    if order < 1:
        raise ConfigurationError("order must be >= 1", f"{path}.order")
    head = {
        "label": str(p.get("label", "")),
        "order": order,
        "composite": bool(p.get("composite", False)),
        "mirror": bool(p.get("mirror", False)),
    }
    common = {"label", "order", "composite", "mirror"}
    if "terms" in p:
        _check_keys(p, common | {"terms"}, path)
        terms = p["terms"]
        if not isinstance(terms, list) or not terms:
            raise ConfigurationError("terms must be a non-empty array of tables", f"{path}.terms")
        head["terms"] = [_term(t, f"{path}.terms[{j}]", sp, order) for j, t in enumerate(terms)]
        return head
    typ = str(p.get("type", "lattice"))
    body = {k: v for k, v in p.items() if k not in common}
    if typ == "bloch":
        _check_keys(body, _BLOCH_KEYS, path)
        head["terms"] = [_bloch_term(body, path, sp)]
        return head
    if typ != "lattice":
        raise ConfigurationError(f"unknown pulse type {typ!r}", f"{path}.type")
    pair = bool(body.pop("pair", False))
    delta_k = quantity(body.pop("delta_k", 0.0), f"{path}.delta_k", sp)
    _check_keys(body, _LATTICE_KEYS, path)
    term = _lattice_term(body, path, sp, order)
    term["k"] += delta_k / (2 * order)
    if not pair:
        head["terms"] = [term]
        return head
    terms = []
    for d in (1, -1):
        t = dict(term, direction=d)
        t["phase"] = term["phase"] + math.remainder(2 * t["k"] * d * t["velocity"] * t["center"], 2 * math.pi)
        terms.append(t)
    head["terms"] = terms
    return head


def _grid(t: dict, sp: Species, cfg: dict) -> dict:
    _check_keys(t, {"x_min", "x_max", "n_points", "dx", "center", "per_lambda"}, "grid")
    q = lambda v, name: quantity(v, f"grid.{name}", sp)  # noqa: E731
    if "x_min" in t or "x_max" in t:
        for key in ("x_min", "x_max", "n_points"):
            if key not in t:
                raise ConfigurationError("explicit grids need x_min, x_max and n_points", f"grid.{key}")
        g = Grid(q(t["x_min"], "x_min"), q(t["x_max"], "x_max"), _int(t["n_points"], "grid.n_points"))
    elif "dx" in t:
        dx = q(t["dx"], "dx")
        if "n_points" in t:
            g = Grid.from_spacing(dx, _int(t["n_points"], "grid.n_points"), q(t.get("center", 0.0), "center"))
        else:
            g = _auto(sp, cfg, dx)
    else:
        per = _int(t["per_lambda"], "grid.per_lambda") if "per_lambda" in t else None
        g = _auto(sp, cfg, None, per)
    return {"x_min": g.x_min, "x_max": g.x_max, "n_points": g.n_points}


def _auto(sp: Species, cfg: dict, dx=None, per_lambda=None) -> Grid:
    """Cover every port trajectory and the initial packet with a margin."""
    me, ini = cfg["measurement"], cfg["initial_state"]
    terms = [t for p in cfg["pulses"] for t in p["terms"]]
    t_end = _end_time(cfg)
    t0 = min([0.0] + [_window(t)[0] for t in terms])
    dur = t_end - t0
    m = sp.mass
    xs = [ini["x0"]]
    for p in me["ports"]:
        xs.append(me["x_ref"] + p / m * (t_end - me["t_ref"]))
    top = 0.0
    for t in terms:
        if t["type"] == "lattice":
            v = 2 * abs(t["velocity"]) * (1 if t["velocity"] * t["direction"] >= 0 else -1)
            top = max(top, abs(t["velocity"]) / sp.v_r + 1)
        else:
            v = abs(t["v_start"]) + 2 * abs(t["n_bloch"]) * t["v_recoil"]
            top = max(top, v / sp.v_r)
        xs.append(ini["x0"] + v * dur)
    if ini["kind"] == "gaussian":
        sigma_p = ini["sigma_p"]
        if not sigma_p > 0:
            raise ConfigurationError("sigma_p must be positive for a Gaussian packet", "initial_state.sigma_p")
        width = math.hypot(HBAR / (2 * sigma_p), sigma_p / m * dur)
    else:
        mf = cfg.get("mean_field")
        if not mf:
            raise ConfigurationError("a BEC initial state needs [mean_field]", "mean_field")
        from .state import thomas_fermi_radius

        width = thomas_fermi_radius(mf["g1d"], mf["n_atoms"], ini["omega_x"], m)
        sigma_p = 0.0
    margin = 12 * width + 20e-6
    reach = max([abs(p) / sp.hbar_k for p in me["ports"]] + [2 * top, 1.0])
    lo, hi = min(xs), max(xs)
    if dx is None:
        return auto_grid(sp, lo, hi, margin, per_lambda or _per_lambda(reach), sigma_p)
    length = hi - lo + 2 * margin
    if sigma_p > 0:
        length = max(length, 10.5 * 2 * math.pi * HBAR / sigma_p)
    return grid_for_spacing(dx, length, 0.5 * (lo + hi))


def _envelope(t: dict) -> PulseEnvelope:
    return PulseEnvelope(t["envelope"], t["omega"], t["center"], t["tau"], t["truncation"], t["rise"])


def _window(t: dict) -> tuple[float, float]:
    if t["type"] == "bloch":
        return t["t_start"], t["t_start"] + t["tau_al"] + t["tau_bo"] + t["tau_aul"]
    return _envelope(t).support()


def _end_time(cfg: dict) -> float:
    last = max([_window(t)[1] for p in cfg["pulses"] for t in p["terms"]] + [0.0])
    return last + cfg["measurement"]["tof"]


def _fringe(t, sp, cfg):
    _check_keys(t, {"n_points", "phases"}, "fringe")
    out = {"n_points": _int(t.get("n_points", 24), "fringe.n_points")}
    if "phases" in t:
        out["phases"] = [quantity(v, f"fringe.phases[{i}]", sp) for i, v in enumerate(t["phases"])]
    return out


def _calibration(t, sp, cfg):
    _check_keys(
        t, {"order", "tau", "envelope", "target", "sigma_p", "bracket", "mode", "n_samples", "p0", "ports",
            "target_ports", "tol"}, "calibration",
    )
    q = lambda v, name: quantity(v, f"calibration.{name}", sp)  # noqa: E731
    n = _int(t.get("order", 1), "calibration.order")
    out = {
        "order": n,
        "tau": q(t.get("tau", 25e-6), "tau"),
        "envelope": str(t.get("envelope", "gaussian")),
        "target": str(t.get("target", "half")),
        "sigma_p": q(t.get("sigma_p", "0.01 hk"), "sigma_p"),
        "mode": str(t.get("mode", "single")),
        "n_samples": _int(t.get("n_samples", 6), "calibration.n_samples"),
        "p0": q(t.get("p0", 0.0), "p0"),
        "tol": q(t.get("tol", 1e-4), "tol"),
        "ports": [q(v, f"ports[{i}]") for i, v in enumerate(t.get("ports", [0.0, f"{2 * n} hk"]))],
        "target_ports": [q(v, f"target_ports[{i}]") for i, v in enumerate(t.get("target_ports", [f"{2 * n} hk"]))],
    }
    if out["target"] not in ("half", "full"):
        raise ConfigurationError("target must be 'half' or 'full'", "calibration.target")
    if "bracket" in t:
        br = t["bracket"]
        if not isinstance(br, list) or len(br) != 2:
            raise ConfigurationError("bracket must be [lo, hi]", "calibration.bracket")
        out["bracket"] = [q(br[0], "bracket[0]"), q(br[1], "bracket[1]")]
    return out


def _gradiometer(t, sp, cfg):
    _check_keys(t, {"baseline", "k_eff", "delta_k", "n_phases"}, "gradiometer")
    grav = cfg.get("gravity")
    if not grav:
        raise ConfigurationError("a gradiometer needs [gravity]", "gravity")
    if "T" not in cfg:
        raise ConfigurationError("a gradiometer needs the interrogation time T", "T")
    k_eff = quantity(t.get("k_eff", "4 k"), "gradiometer.k_eff", sp)
    # "dkB" is the Bragg compensation value Γ·k_eff·T²/2
    extra = {"dkB": 0.5 * grav["gamma"] * k_eff * cfg["T"] ** 2}
    scan = t.get("delta_k", [0.0])
    if not isinstance(scan, list) or not scan:
        raise ConfigurationError("delta_k must be a non-empty array", "gradiometer.delta_k")
    return {
        "baseline": quantity(t.get("baseline", 0.0), "gradiometer.baseline", sp),
        "k_eff": k_eff,
        "delta_k": [quantity(v, f"gradiometer.delta_k[{i}]", sp, extra) for i, v in enumerate(scan)],
        "n_phases": _int(t.get("n_phases", 8), "gradiometer.n_phases"),
    }


def _convergence(t, sp, cfg):
    _check_keys(t, {"dts", "dxs", "observable", "max_order"}, "convergence")
    dts = t.get("dts", [cfg["numerics"]["dt_interaction"]])
    if "dxs" not in t:
        raise ConfigurationError("dxs is required", "convergence.dxs")
    out = {
        "dts": [quantity(v, f"convergence.dts[{i}]", sp) for i, v in enumerate(dts)],
        "dxs": [quantity(v, f"convergence.dxs[{i}]", sp) for i, v in enumerate(t["dxs"])],
        "observable": _int(t.get("observable", 0), "convergence.observable"),
    }
    if t.get("max_order") is not None:
        out["max_order"] = float(t["max_order"])
    return out


def _imbalance(t, sp, cfg):
    _check_keys(t, {"delta_n", "bracket", "tol"}, "imbalance")
    dn = t.get("delta_n", [0.0])
    dn = dn if isinstance(dn, list) else [dn]
    out = {
        "delta_n": [quantity(v, f"imbalance.delta_n[{i}]", sp) for i, v in enumerate(dn)],
        "tol": quantity(t.get("tol", 1e-3), "imbalance.tol", sp),
    }
    if "bracket" in t:
        br = t["bracket"]
        if not isinstance(br, list) or len(br) != 2:
            raise ConfigurationError("bracket must be [lo, hi]", "imbalance.bracket")
        out["bracket"] = [quantity(v, f"imbalance.bracket[{i}]", sp) for i, v in enumerate(br)]
    return out


def _benchmark(t, sp, cfg):
    _check_keys(t, {"sizes", "n_steps", "repeats", "n_max"}, "benchmark")
    sizes = t.get("sizes", [4096, 8192, 16384, 32768, 65536])
    return {
        "sizes": [_int(v, f"benchmark.sizes[{i}]") for i, v in enumerate(sizes)],
        "n_steps": _int(t.get("n_steps", 20), "benchmark.n_steps"),
        "repeats": _int(t.get("repeats", 3), "benchmark.repeats"),
        "n_max": _int(t.get("n_max", 8), "benchmark.n_max"),
    }


# ---------------------------------------------------------------------------
# building


def species_of(cfg: dict) -> Species:
    s = cfg["species"]
    return Species(s["mass"], s["lambda"], s["a_s"], s["name"])


def _make_term(t: dict, x_origin):
    origin = t["x_origin"] if x_origin is None else x_origin
    if t["type"] == "lattice":
        return LatticeTerm(_envelope(t), t["k"], t["velocity"], t["phase"], origin, t["direction"])
    return BlochTerm(
        t["omega"], t["k"], t["v_start"], t["n_bloch"], t["tau_al"], t["tau_bo"], t["tau_aul"], t["t_start"],
        t["v_recoil"], t["x_start"], t["phase"], origin,
    )


def build_spec(cfg: dict, *, x_origin: float | None = None, delta_k: float = 0.0) -> SequenceSpec:
    """SequenceSpec from a canonical config.

    ``x_origin`` replaces the origin of every lattice, Bloch and gravity
    term (the two gradiometer interferometers differ only in this);
    ``delta_k`` changes the effective wave vector of pulses flagged ``mirror``.
    """
    pulses = []
    for i, p in enumerate(cfg["pulses"]):
        try:
            spec = PulseSpec(tuple(_make_term(t, x_origin) for t in p["terms"]), p["label"], p["order"],
                             p["composite"])
        except ConfigurationError as exc:
            raise ConfigurationError(str(exc), f"pulses[{i}]") from exc
        if p["mirror"] and delta_k:
            spec = spec.with_k_correction(delta_k)
        pulses.append(spec)
    g = cfg["grid"]
    grid = Grid(g["x_min"], g["x_max"], g["n_points"])
    ini = cfg["initial_state"]
    initial = InitialState(ini["kind"], ini["sigma_p"], ini["x0"], ini["p0"], ini["omega_x"], ini["tol"])
    me = cfg["measurement"]
    meas = Measurement(
        tuple(me["ports"]), me["mode"], me["x_ref"], me["t_ref"], me["half_width"], me["bin_width"],
        me["phase_pulse"], me["n_order"], me["plus_port"], me["floor"], me["parasitic_radius"],
        me["min_separation_sigmas"],
    )
    num = cfg["numerics"]
    scheme = StepScheme(num["scheme"], num["dt_interaction"], num["dt_free"], num["composition"])
    mf = cfg.get("mean_field")
    mean_field = MeanField(mf["g1d"], mf["n_atoms"]) if mf else None
    static = ()
    grav = cfg.get("gravity")
    if grav and (grav["g"] or grav["gamma"]):
        origin = grav["x_origin"] if x_origin is None else x_origin
        static = (GravityTerm(species_of(cfg).mass, grav["g"], grav["gamma"], origin),)
    return SequenceSpec(
        species_of(cfg), grid, initial, tuple(pulses), me["tof"], meas, scheme, mean_field, static,
        cfg.get("T"), cfg.get("phi0", 0.0), cfg["frame"], cfg["kind"], cfg.get("t_start"),
    )


def _term_dict(term) -> dict:
    if isinstance(term, LatticeTerm):
        e = term.envelope
        return {
            "type": "lattice", "envelope": e.kind, "omega": e.peak_rabi, "tau": e.duration, "center": e.center,
            "truncation": e.truncation, "rise": e.rise, "k": term.k_lattice, "velocity": term.velocity,
            "phase": term.phase, "x_origin": term.x_origin, "direction": term.direction,
        }
    if isinstance(term, BlochTerm):
        return {
            "type": "bloch", "omega": term.peak_rabi, "k": term.k_lattice, "v_start": term.v_start,
            "n_bloch": term.n_bloch, "tau_al": term.tau_al, "tau_bo": term.tau_bo, "tau_aul": term.tau_aul,
            "t_start": term.t_start, "v_recoil": term.v_recoil, "x_start": term.x_start, "phase": term.phase,
            "x_origin": term.x_origin,
        }
    raise ConfigurationError(f"cannot serialise term {type(term).__name__}", "pulses")


def spec_to_config(spec: SequenceSpec, **sections) -> dict:
    """Canonical config reproducing ``spec`` exactly; ``sections`` adds
    command tables (fringe, gradiometer, ...) already in canonical form.

    Pulses labelled ``mirror`` are flagged so a gradiometer scan can change
    their wave vector.
    """
    sp = spec.species
    me = spec.measurement
    cfg = {
        "label": spec.kind,
        "kind": spec.kind,
        "frame": spec.frame,
        "phi0": spec.phi0,
        "species": {"name": sp.name, "mass": sp.mass, "lambda": sp.lambda_light, "a_s": sp.a_s},
        "numerics": {
            "scheme": spec.scheme.order, "dt_interaction": spec.scheme.dt_interaction,
            "dt_free": spec.scheme.dt_free, "composition": spec.scheme.composition,
        },
        "initial_state": {
            "kind": spec.initial.kind, "sigma_p": spec.initial.sigma_p, "x0": spec.initial.x0,
            "p0": spec.initial.p0, "omega_x": spec.initial.omega_x, "tol": spec.initial.tol,
        },
        "pulses": [
            {"label": p.label, "order": p.order, "composite": p.composite, "mirror": p.label == "mirror",
             "terms": [_term_dict(t) for t in p.terms]}
            for p in spec.pulses
        ],
        "measurement": {
            "mode": me.mode, "ports": [float(p) for p in me.ports], "x_ref": me.x_ref, "t_ref": me.t_ref,
            "tof": spec.tof, "half_width": me.half_width, "bin_width": me.bin_width,
            "phase_pulse": me.phase_pulse, "n_order": me.n_order, "plus_port": me.plus_port, "floor": me.floor,
            "parasitic_radius": me.parasitic_radius, "min_separation_sigmas": me.min_separation_sigmas,
        },
        "grid": {"x_min": spec.grid.x_min, "x_max": spec.grid.x_max, "n_points": spec.grid.n_points},
    }
    if spec.T is not None:
        cfg["T"] = spec.T
    if spec.t_start is not None:
        cfg["t_start"] = spec.t_start
    if spec.mean_field is not None:
        cfg["mean_field"] = {"g1d": spec.mean_field.g1d, "n_atoms": spec.mean_field.n_atoms}
    grav = [t for t in spec.static_terms if isinstance(t, GravityTerm)]
    if len(grav) != len(spec.static_terms) or len(grav) > 1:
        raise ConfigurationError("only a single gravity term can be serialised", "static_terms")
    if grav:
        cfg["gravity"] = {"g": grav[0].g, "gamma": grav[0].gamma, "x_origin": grav[0].x_origin}
    cfg.update(copy.deepcopy(sections))
    return cfg


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(type(v))


def to_toml(cfg: dict) -> str:
    """TOML text for a canonical config (None values are dropped)."""
    lines = []
    for k, v in cfg.items():
        if v is not None and not isinstance(v, (dict, list)) or isinstance(v, list) and not (
            v and isinstance(v[0], dict)
        ):
            lines.append(f"{k} = {_toml_value(v)}")
    for k, v in cfg.items():
        if isinstance(v, dict):
            lines.append(f"\n[{k}]")
            lines += [f"{a} = {_toml_value(b)}" for a, b in v.items() if b is not None]
    for p in cfg.get("pulses", []):
        lines.append("\n[[pulses]]")
        lines += [f"{a} = {_toml_value(b)}" for a, b in p.items() if a != "terms"]
        for t in p["terms"]:
            lines.append("[[pulses.terms]]")
            lines += [f"{a} = {_toml_value(b)}" for a, b in t.items() if b is not None]
    return "\n".join(lines) + "\n"
