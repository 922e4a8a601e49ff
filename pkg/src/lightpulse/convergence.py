"""Time-step and grid-spacing convergence tables for a sequence observable."""

from __future__ import annotations

import dataclasses
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .errors import ConfigurationError
from .grid import Grid, check_resolution
from .sequences import SequenceSpec, run_sequence


@dataclass(frozen=True)
class ConvergenceRow:
    dt: float
    dx: float
    n_points: int
    value: float
    deviation: float  # |value − value at the finest (dt, dx)|
    truncation: bool  # momentum-truncation flag of the grid


def regrid(spec: SequenceSpec, dx: float) -> Grid:
    """Grid of spacing ``dx`` centred like ``spec.grid``, with the power-of-two
    point count whose length is closest to the original one."""
    g = spec.grid
    n = 2 ** max(1, round(math.log2(g.length / dx)))
    return Grid.from_spacing(dx, n, 0.5 * (g.x_min + g.x_max))


def _observable(spec: SequenceSpec, observable):
    if callable(observable):
        return observable
    idx = int(observable)
    if not 0 <= idx < len(spec.measurement.ports):
        raise ConfigurationError(f"observable port {idx} does not exist", "observable")
    return lambda res: res.raw[idx]


def convergence_scan(problem: SequenceSpec, dts, dxs, observable=0, max_order: float | None = None,
                     threads: int = 1) -> list[ConvergenceRow]:
    """Run ``problem`` on every (dt, dx) pair and tabulate ``observable``.

    ``dt`` replaces both the interaction and the free step. ``observable`` is
    a port index (raw population) or a callable on the RunResult.
    ``max_order`` (ħk) is the momentum that the truncation flag checks;
    default: the largest port momentum.
    """
    dts, dxs = list(dts), list(dxs)
    if not dts or not dxs:
        raise ConfigurationError("dts and dxs must be non-empty", "convergence")
    obs = _observable(problem, observable)
    sp = problem.species
    if max_order is None:
        max_order = max(abs(p) for p in problem.measurement.ports) / sp.hbar_k

    def one(pair):
        dt, dx = pair
        grid = regrid(problem, dx)
        scheme = dataclasses.replace(problem.scheme, dt_interaction=dt, dt_free=dt)
        spec = dataclasses.replace(problem, grid=grid, scheme=scheme)
        res = run_sequence(spec)
        # σ_p does not matter for the truncation flag; the lattice-scale one is used
        rep = check_resolution(grid, sp, max_order, sp.hbar_k, 0.0)
        return dt, dx, grid.n_points, float(obs(res)), rep.truncation

    pairs = list(itertools.product(dts, dxs))
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        raw = list(pool.map(one, pairs))
    finest = min(raw, key=lambda r: (r[0], r[1]))
    return [ConvergenceRow(dt, dx, n, v, abs(v - finest[3]), tr) for dt, dx, n, v, tr in raw]


def finest_pair_deviation(rows, axis: str) -> float:
    """|Δ observable| between the two finest settings along ``axis`` ('dt' or 'dx')."""
    if axis not in ("dt", "dx"):
        raise ValueError("axis must be 'dt' or 'dx'")
    other = "dx" if axis == "dt" else "dt"
    best_other = min(getattr(r, other) for r in rows)
    line = sorted((r for r in rows if getattr(r, other) == best_other), key=lambda r: getattr(r, axis))
    if len(line) < 2:
        return 0.0
    return abs(line[0].value - line[1].value)


def rows_as_table(rows) -> list[dict]:
    return [dataclasses.asdict(r) for r in rows]


__all__ = ["ConvergenceRow", "convergence_scan", "finest_pair_deviation", "regrid", "rows_as_table"]
