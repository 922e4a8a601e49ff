"""Command-line entry point.

Every command reads a config (TOML, JSON, or a previous manifest.json),
writes its tables into ``--out-dir`` and a ``manifest.json`` holding the
canonical config, the step scheme, the package version and timings.
Exit codes: 0 ok, 2 configuration, 3 numerical, 4 fit or measurement.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import default_phase_scan
from .calibration import PulseProbe, optimize_rabi
from .config import build_spec, canonical_json, load_config, species_of
from .convergence import convergence_scan
from .errors import CalibrationError, ConfigurationError, FitError, MeasurementError, NumericalError
from .ode_oracle import complexity_benchmark
from .propagator import DensityRecorder, StepScheme
from .sequences import (
    fringe_scan,
    run_bragg_bloch,
    run_double_bragg,
    run_gradiometer,
    run_mach_zehnder,
    run_raman_nath,
    run_sequence,
    run_trapped_mz,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_FIT = 0, 2, 3, 4
MANIFEST_VERSION = 1

_RUNNERS = {
    "mach_zehnder": run_mach_zehnder,
    "double_bragg": run_double_bragg,
    "raman_nath": run_raman_nath,
}


def _num(v) -> str:
    """Shortest round-trip text for a float; integers and flags verbatim."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_num(v) for v in row) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, data) -> None:
    text = json.dumps(_jsonable(data), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    path.write_text(text, encoding="utf-8")


class Context:
    """Shared state of one command invocation."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg = load_config(args.config) if args.config else None
        self.timings: dict[str, float] = {}
        self.outputs: list[str] = []
        self.results: dict = {}
        self.caught: list = []

    def timed(self, name, fn, *a, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*a, **kw)
        finally:
            self.timings[name] = time.perf_counter() - t0

    def csv(self, name, header, rows):
        write_csv(self.out / name, header, rows)
        self.outputs.append(name)

    def json(self, name, data):
        write_json(self.out / name, data)
        self.outputs.append(name)

    def manifest(self, command: str, scheme: dict | None = None):
        data = {
            "manifest_version": MANIFEST_VERSION,
            "command": command,
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "threads": self.args.threads,
            "config": json.loads(canonical_json(self.cfg)) if self.cfg else None,
            "scheme": scheme,
            "timings": self.timings,
            "results": self.results,
            "outputs": sorted(self.outputs),
            "warnings": [str(w.message) for w in self.caught],
        }
        write_json(self.out / "manifest.json", data)


def _need_config(ctx: Context, section: str | None = None) -> dict:
    if ctx.cfg is None:
        raise ConfigurationError("--config is required", "config")
    if section and section not in ctx.cfg:
        raise ConfigurationError(f"this command needs a [{section}] table", section)
    return ctx.cfg


def _port_rows(spec, pops):
    hk = spec.species.hbar_k
    return [
        (i, p / hk, raw, norm)
        for i, (p, raw, norm) in enumerate(zip(spec.measurement.ports, pops.raw, pops.normalized))
    ]


POP_HEADER = ("port", "momentum_hk", "raw", "normalized")


def _write_density(ctx: Context, rec: DensityRecorder):
    mat = rec.matrix
    header = {
        "grid": rec.grid.describe() if rec.grid else None,
        "stride": rec.stride,
        "times": rec.times,
        "shape": list(mat.shape),
        "dtype": "<f4",
        "order": "C",
    }
    if ctx.args.format == "binary":
        rec.write(ctx.out / "density")
        ctx.outputs += ["density.json", "density.bin"]
        return
    ctx.json("density.json", header)
    x = rec.grid.x
    with open(ctx.out / "density.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,x,density\n")
        for t, row in zip(rec.times, mat):
            block = np.column_stack([np.full(len(x), t), x, row.astype(float)])
            np.savetxt(fh, block, fmt=("%.17g", "%.17g", "%.9g"), delimiter=",")
    ctx.outputs.append("density.csv")


# ---------------------------------------------------------------------------
# commands


def cmd_run(ctx: Context) -> int:
    cfg = _need_config(ctx)
    spec = build_spec(cfg)
    stride = ctx.args.density_stride
    rec = None
    trace = None
    if stride:
        rec = DensityRecorder(stride, free_interval=stride * spec.scheme.dt_free)
        res = ctx.timed("run", run_sequence, spec, recorder=rec)
    elif spec.kind == "bragg_bloch":
        res, trace = ctx.timed("run", run_bragg_bloch, spec)
    else:
        res = ctx.timed("run", _RUNNERS.get(spec.kind, run_sequence), spec)
    ctx.csv("populations.csv", POP_HEADER, _port_rows(spec, res.populations))
    if trace is not None:
        hk = spec.species.hbar_k
        header = ("t",) + tuple(f"p_{p / hk:g}hk" for p in spec.measurement.ports)
        ctx.csv("trace.csv", header, [(t, *v) for t, v in zip(trace.times, trace.values)])
    if rec is not None:
        _write_density(ctx, rec)
    ctx.results = {
        "populations": {"raw": list(res.raw), "normalized": list(res.normalized)},
        "parasitic": res.parasitic,
        "n_steps": res.n_steps,
        "norm_drift": res.norm_drift,
    }
    ctx.manifest("run", spec.scheme.describe())
    return EXIT_OK


def _phases(ctx: Context, cfg: dict, n_order: int):
    """Laser phases on [0, 2π); the fit needs 2n + 1 of them for harmonic n."""
    fr = cfg.get("fringe", {})
    if "phases" in fr and not ctx.args.n_points:
        return np.asarray(fr["phases"], float)
    n_points = ctx.args.n_points or fr.get("n_points", 24)
    if n_points < max(5, 2 * n_order + 1):
        raise ConfigurationError(f"harmonic {n_order} needs at least {max(5, 2 * n_order + 1)} phase points",
                                 "fringe.n_points")
    return default_phase_scan(n_points)


def cmd_fringe(ctx: Context) -> int:
    cfg = _need_config(ctx)
    if ctx.args.phase_pulse is not None:
        cfg["measurement"]["phase_pulse"] = ctx.args.phase_pulse
    spec = build_spec(cfg)
    n = spec.measurement.n_order
    phis = _phases(ctx, cfg, n)
    threads = ctx.args.threads
    if "imbalance" in cfg:
        return _trapped(ctx, cfg, spec, phis)
    scan = ctx.timed("fringe", fringe_scan, spec, phis, threads)
    k = len(spec.measurement.ports)
    header = ("phi0", "p_plus") + tuple(f"raw_{i}" for i in range(k)) + tuple(f"normalized_{i}" for i in range(k))
    rows = [(phi, pp, *pop.raw, *pop.normalized) for phi, pp, pop in zip(scan.phis, scan.p_plus, scan.populations)]
    ctx.csv("fringe.csv", header, rows)
    ctx.json("fit.json", scan.fit.as_dict())
    ctx.results = {"fit": scan.fit.as_dict()}
    ctx.manifest("fringe", spec.scheme.describe())
    return EXIT_OK


def _trapped(ctx: Context, cfg, spec, phis) -> int:
    imb = cfg["imbalance"]
    rows, fits = [], []
    wr = spec.species.omega_r
    t0 = time.perf_counter()
    for dn in imb["delta_n"]:
        br = imb.get("bracket")
        res = run_trapped_mz(spec, dn, tuple(br) if br else None, phis, ctx.args.threads, imb["tol"])
        rows.append((dn, res.delta_n, res.splitter_omega / wr, res.delta_phi, res.contrast,
                     res.scan.fit.residual_rms))
        fits.append(dict(res.scan.fit.as_dict(), delta_n=res.delta_n, splitter_omega=res.splitter_omega))
    ctx.timings["trapped"] = time.perf_counter() - t0
    ctx.csv("trapped.csv", ("delta_n_target", "delta_n", "splitter_omega_wr", "delta_phi", "contrast",
                            "residual_rms"), rows)
    out = {"fits": fits}
    if len(rows) >= 2:
        x = np.array([r[1] for r in rows])
        y = np.array([r[3] for r in rows])
        slope, icpt = np.polyfit(x, y, 1)
        pred = slope * x + icpt
        ss = float(np.sum((y - y.mean()) ** 2))
        out.update(slope=float(slope), intercept=float(icpt),
                   r2=float(1 - np.sum((y - pred) ** 2) / ss) if ss > 0 else None)
    ctx.json("fit.json", out)
    ctx.results = out
    ctx.manifest("fringe", spec.scheme.describe())
    return EXIT_OK


def cmd_calibrate(ctx: Context) -> int:
    cfg = _need_config(ctx, "calibration")
    c = cfg["calibration"]
    sp = species_of(cfg)
    hk, wr = sp.hbar_k, sp.omega_r
    num = cfg["numerics"]
    probe = PulseProbe(
        sp, c["order"], c["tau"], c["envelope"], c["sigma_p"] / hk, c["p0"] / hk, c["mode"],
        tuple(p / hk for p in c["ports"]), tuple(p / hk for p in c["target_ports"]),
        scheme=StepScheme(num["scheme"], num["dt_interaction"], num["dt_free"], num["composition"]),
    )
    res = ctx.timed(
        "calibrate", optimize_rabi, c["order"], c["tau"], c["envelope"], c["target"], c["sigma_p"] / hk,
        tuple(c["bracket"]) if "bracket" in c else None, sp, probe=probe, n_samples=c["n_samples"],
        threads=ctx.args.threads, tol=c["tol"],
    )
    ctx.csv("calibration.csv", ("omega", "omega_wr", "transfer"), [(w, w / wr, p) for w, p in res.curve])
    record = res.as_dict(wr)
    ctx.json("calibration.json", record)
    ctx.results = record
    ctx.manifest("calibrate", probe.scheme.describe())
    return EXIT_OK


def cmd_gradiometer(ctx: Context) -> int:
    cfg = _need_config(ctx, "gradiometer")
    g = cfg["gradiometer"]
    gamma = cfg["gravity"]["gamma"]
    T = cfg["T"]

    def make_spec(position, dk):
        # a configuration at global height h has its local origin at −h
        return build_spec(cfg, x_origin=-position, delta_k=dk)

    probe = make_spec(0.0, 0.0)
    phis = default_phase_scan(g["n_phases"])
    res = ctx.timed(
        "gradiometer", run_gradiometer, make_spec, g["baseline"], g["delta_k"],
        k_eff=g["k_eff"], gamma=gamma, T=T, phis=phis, threads=ctx.args.threads,
    )
    dkb = res.delta_k_bragg
    rel = [dk / dkb if dkb else math.nan for dk in res.delta_k]
    ctx.csv(
        "gradiometer.csv",
        ("delta_k", "delta_k_over_bragg", "phi_upper", "phi_lower", "Phi"),
        list(zip(res.delta_k, rel, res.phi_upper, res.phi_lower, res.phase)),
    )
    summary = {"analytic_phase": res.analytic_phase, "delta_k_bragg": dkb, "Phi": list(res.phase)}
    if len(res.delta_k) >= 2:
        slope = np.polyfit(res.delta_k, res.phase, 1)[0]
        if abs(slope) > 0:
            cross = res.zero_crossing()
            summary["zero_crossing"] = cross
            summary["zero_crossing_over_bragg"] = cross / dkb if dkb else None
        summary["Phi_at_bragg"] = res.phase_at(dkb)
    ctx.json("gradiometer.json", summary)
    ctx.results = summary
    ctx.manifest("gradiometer", probe.scheme.describe())
    return EXIT_OK


def cmd_converge(ctx: Context) -> int:
    cfg = _need_config(ctx, "convergence")
    c = cfg["convergence"]
    spec = build_spec(cfg)
    rows = ctx.timed(
        "converge", convergence_scan, spec, c["dts"], c["dxs"], c["observable"], c.get("max_order"),
        ctx.args.threads,
    )
    lam = spec.species.lambda_light
    ctx.csv(
        "convergence.csv",
        ("dt", "dx", "dx_over_lambda", "n_points", "value", "deviation", "truncation"),
        [(r.dt, r.dx, r.dx / lam, r.n_points, r.value, r.deviation, r.truncation) for r in rows],
    )
    ctx.results = {"n_rows": len(rows), "max_deviation": max(r.deviation for r in rows)}
    ctx.manifest("converge", spec.scheme.describe())
    return EXIT_OK


def cmd_benchmark(ctx: Context) -> int:
    cfg = ctx.cfg or {}
    b = cfg.get("benchmark", {"sizes": [4096, 8192, 16384, 32768, 65536], "n_steps": 20, "repeats": 3, "n_max": 8})
    sp = species_of(cfg) if cfg else None
    if sp is None:
        from .grid import rubidium87

        sp = rubidium87()
    out = ctx.timed("benchmark", complexity_benchmark, b["sizes"], sp, b["n_steps"], b["repeats"], b["n_max"])
    # timings vary run to run; they go to the JSON record, not a CSV
    ctx.json("benchmark.json", {"sizes": b["sizes"], "rows": out["rows"], "slope_ode": out["slope_ode"],
                                "slope_pde": out["slope_pde"],
                                "columns": ["n", "seconds_per_step_ode", "seconds_per_step_pde"]})
    ctx.results = {"slope_ode": out["slope_ode"], "slope_pde": out["slope_pde"]}
    ctx.manifest("benchmark")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "fringe": cmd_fringe,
    "calibrate": cmd_calibrate,
    "gradiometer": cmd_gradiometer,
    "converge": cmd_converge,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lightpulse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lightpulse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "benchmark", help="TOML/JSON config or manifest.json")
        p.add_argument("--out-dir", default="out", help="directory for the artifacts")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker pool size")
        p.add_argument("--density-stride", type=int, default=0, help="record |psi|^2 every N steps (run only)")
        p.add_argument("--format", choices=("csv", "binary"), default="binary", help="density file format")
        if name == "fringe":
            p.add_argument("--n-points", type=int, default=None, help="phase points over one fringe period")
            p.add_argument("--phase-pulse", type=int, default=None, help="index of the phase-carrying pulse")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: threads: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.density_stride < 0:
        print("error: density_stride: must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            ctx = Context(args)
            ctx.caught = caught
            code = COMMANDS[args.command](ctx)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return code
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FitError, MeasurementError, CalibrationError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
