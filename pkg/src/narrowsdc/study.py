"""Convergence studies driven by a flat JSON configuration.

Example configuration::

    {"problem": "T1", "stencil": "SMC", "grids": [20, 40], "t_final": 1.0,
     "output": "t1.csv"}

Recognized keys (all optional except ``problem``):

``problem``
    ``T1``, ``T2``, ``SdcOrderODE``, ``MrsdcMode1ODE``, ``MrsdcMode2ODE`` or
    ``CostModel``.
``stencil``, ``stencil_params``
    Preset name (``SMC``, ``ZERO``, ``OPTIMAL``, ``narrow6``, ``wide8``) or a
    stencil kind with explicit free parameters.
``grids``
    Grid sizes for the heat problems; step counts over ``t_final`` for the
    ODE problems.
``nodes``, ``num_nodes``, ``iterations``
    Node family (``gauss-lobatto`` or ``clenshaw-curtis``), node count and
    sweeps per step.  Defaults: Gauss-Lobatto, 3 nodes, 4 sweeps.
``fine_type``, ``fine_nodes``, ``fine_family``, ``repeats``
    Multirate hierarchy: ``A`` (one fine rule), ``B`` (fine rule per coarse
    interval) or ``C`` (fine rule ``repeats`` times per coarse interval).
``dt_rule``, ``dt``, ``dt_list``
    ``DiffusiveLimit`` (default for heat problems), ``Fixed``,
    ``HalvingList`` (one entry of ``dt_list`` per grid) or ``Steps``
    (``t_final / grid``; default for ODE problems).
``reference``, ``reference_resolution``
    ``Exact``, ``HighRes`` (same solver on a finer grid) or ``Spectral``
    (Fourier/Chebyshev solution with ``reference_resolution`` modes).
``lambda1``, ``lambda2``, ``stiffness``, ``stiff_method``, ``stiff_rtol``, ``stiff_atol``
    ODE test problem parameters.
``residual_ratio_cutoff``, ``residual_tol``
    Early stopping of sweeps; off by default so every step does
    ``iterations`` sweeps.
``flops``, ``bandwidth``
    Machine model for ``CostModel``, whose ``grids`` are component counts.
``output``
    CSV path (header ``resolution,dt,linf,linf_rate,l2,l2_rate``).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import quadrature as qd
from .costmodel import MachineModel, crossover_bandwidth, extra_comm_time, extra_flop_time, time_delta
from .mrsdc import integrate_multirate
from .pde import (
    Grid2D,
    HeatOperator,
    diffusive_dt,
    error_norms,
    make_prothero_robinson,
    make_split_linear,
    make_t1,
    make_t2,
    restrict_sample,
    spectral_reference,
)
from .sdc import StepControls, integrate, uniform_steps
from .stencil import StencilChoice
from .stiff import StiffOptions

log = logging.getLogger(__name__)

#: Errors below this are dominated by double-precision roundoff.
PRECISION_FLOOR = 1e-13

WORKERS_ENV = "NARROWSDC_MAX_WORKERS"

PROBLEMS = ("T1", "T2", "SdcOrderODE", "MrsdcMode1ODE", "MrsdcMode2ODE", "CostModel")
HEAT_PROBLEMS = ("T1", "T2")


class ConfigError(ValueError):
    """Invalid study configuration."""


@dataclass(frozen=True)
class StudyConfig:
    problem: str
    stencil: str = "SMC"
    stencil_params: Optional[tuple] = None
    grids: tuple = ()
    nodes: str = "gauss-lobatto"
    num_nodes: int = 3
    iterations: int = 4
    fine_type: str = "B"
    fine_nodes: int = 5
    fine_family: str = "gauss-lobatto"
    repeats: int = 2
    t_final: float = 1.0
    dt_rule: Optional[str] = None
    dt: Optional[float] = None
    dt_list: Optional[tuple] = None
    reference: Optional[str] = None
    reference_resolution: Optional[int] = None
    lambda1: float = -1.0
    lambda2: float = -10.0
    stiffness: float = 1e4
    stiff_method: str = "bdf"
    stiff_rtol: float = 1e-10
    stiff_atol: float = 1e-12
    residual_ratio_cutoff: Optional[float] = None
    residual_tol: Optional[float] = None
    flops: float = 460.8e9
    bandwidth: float = 8e9
    output: Optional[str] = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; expected one of {', '.join(PROBLEMS)}")
        grids = tuple(int(g) for g in self.grids)
        if not grids:
            raise ConfigError("grids must list at least one resolution")
        if list(grids) != sorted(grids) or any(g < 1 for g in grids):
            raise ConfigError("grids must be positive and sorted ascending")
        object.__setattr__(self, "grids", grids)
        if self.problem == "CostModel":
            try:
                MachineModel(self.flops, self.bandwidth)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            return
        heat = self.problem in HEAT_PROBLEMS
        if self.dt_rule is None:
            object.__setattr__(self, "dt_rule", "DiffusiveLimit" if heat else "Steps")
        if self.dt_rule not in ("DiffusiveLimit", "Fixed", "HalvingList", "Steps"):
            raise ConfigError(f"unknown dt_rule {self.dt_rule!r}")
        if self.dt_rule == "DiffusiveLimit" and not heat:
            raise ConfigError("the diffusive dt rule applies to heat problems only")
        if self.dt_rule == "Fixed" and not (self.dt and self.dt > 0):
            raise ConfigError("dt_rule 'Fixed' needs a positive dt")
        if self.dt_rule == "HalvingList":
            if not self.dt_list or len(self.dt_list) != len(grids):
                raise ConfigError("dt_rule 'HalvingList' needs one dt_list entry per grid")
            object.__setattr__(self, "dt_list", tuple(float(x) for x in self.dt_list))
        if self.reference is None:
            object.__setattr__(self, "reference", "Spectral" if self.problem == "T2" else "Exact")
        if self.reference not in ("Exact", "HighRes", "Spectral"):
            raise ConfigError(f"unknown reference {self.reference!r}")
        if self.reference == "Exact" and self.problem == "T2":
            raise ConfigError("T2 has no exact solution; use a highres or spectral reference")
        if self.reference != "Exact" and not heat:
            raise ConfigError("ODE problems are measured against their exact solution")
        if self.reference == "HighRes":
            nref = self.reference_resolution
            if not nref:
                raise ConfigError("highres reference needs reference_resolution")
            bad = [g for g in grids if nref % g]
            if bad:
                raise ConfigError(f"reference resolution {nref} is not divisible by grids {bad}")
        if self.reference == "Spectral" and self.reference_resolution is None:
            object.__setattr__(self, "reference_resolution", 192)
        if self.t_final < 0:
            raise ConfigError("t_final must be non-negative")
        if self.nodes not in ("gauss-lobatto", "clenshaw-curtis"):
            raise ConfigError(f"unknown node family {self.nodes!r}")
        if self.fine_type not in ("A", "B", "C"):
            raise ConfigError(f"unknown fine_type {self.fine_type!r}")
        if self.stencil_params is not None:
            object.__setattr__(self, "stencil_params", tuple(self.stencil_params))
        try:
            self.stencil_choice()
            self.controls()
            self.stiff_options()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        for key, value in data.items():
            if isinstance(value, dict):
                raise ConfigError(f"configuration must be flat; {key!r} is an object")
        if "problem" not in data:
            raise ConfigError("configuration needs a 'problem'")
        data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str) -> "StudyConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        return cls.from_dict(data)

    def stencil_choice(self) -> StencilChoice:
        if self.stencil_params is not None:
            return StencilChoice(self.stencil, tuple(self.stencil_params))
        return StencilChoice.preset(self.stencil)

    def controls(self) -> StepControls:
        return StepControls(self.iterations, self.residual_ratio_cutoff, True, self.residual_tol)

    def stiff_options(self) -> StiffOptions:
        return StiffOptions(rtol=self.stiff_rtol, atol=self.stiff_atol, jacobian="user", method=self.stiff_method)

    def node_set(self, family: Optional[str] = None, n: Optional[int] = None) -> qd.NodeSet:
        family = family or self.nodes
        n = n or self.num_nodes
        return qd.gauss_lobatto(n) if family == "gauss-lobatto" else qd.clenshaw_curtis(n)

    def hierarchy(self) -> qd.MultirateHierarchy:
        coarse = self.node_set()
        inner = self.node_set(self.fine_family, self.fine_nodes)
        spec = {"A": qd.TypeA(inner), "B": qd.TypeB(inner), "C": qd.TypeC(inner, self.repeats)}[self.fine_type]
        try:
            return qd.build_hierarchy(coarse, spec)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class ConvergenceRow:
    resolution: int
    dt: float
    linf: float
    l2: float
    linf_rate: Optional[float] = None
    l2_rate: Optional[float] = None
    notes: list = field(default_factory=list)

    @property
    def precision_limited(self) -> bool:
        return "precision-limited" in self.notes


def _rate(coarse: float, fine: float, ratio: float) -> Optional[float]:
    if fine == 0.0 or coarse == 0.0:
        return None
    return (math.log(coarse) - math.log(fine)) / math.log(ratio)


def compute_rates(rows: list) -> list:
    """Fill in ``log2(E_N / E_2N)`` style rates between adjacent rows.

    Rates use the actual resolution ratio, which is 2 for doubling grids.
    A zero error leaves the rate empty and flags the row.
    """
    out = [replace(r, notes=list(r.notes)) for r in rows]
    if out:
        out[0].linf_rate = out[0].l2_rate = None
    for prev, row in zip(out, out[1:]):
        ratio = row.resolution / prev.resolution
        if ratio <= 1:
            raise ValueError("rates need increasing resolutions")
        row.linf_rate = _rate(prev.linf, row.linf, ratio)
        row.l2_rate = _rate(prev.l2, row.l2, ratio)
        if row.linf_rate is None or row.l2_rate is None:
            row.notes.append("zero-error")
    return out


def _dt_for(cfg: StudyConfig, index: int, grid: Optional[Grid2D], problem) -> float:
    if cfg.dt_rule == "DiffusiveLimit":
        return diffusive_dt(grid, problem)
    if cfg.dt_rule == "Fixed":
        return cfg.dt
    if cfg.dt_rule == "HalvingList":
        return cfg.dt_list[index]
    return cfg.t_final / cfg.grids[index] if cfg.t_final > 0 else 1.0


def _heat_problem(cfg: StudyConfig):
    return make_t1() if cfg.problem == "T1" else make_t2()


def solve_heat(cfg: StudyConfig, n: int, dt_max: float):
    """Integrate the configured heat problem on an ``n x n`` grid."""
    problem = _heat_problem(cfg)
    grid = Grid2D(n)
    op = HeatOperator(problem, grid, cfg.stencil_choice())
    u0 = problem.initial(grid).ravel()
    if cfg.t_final == 0:
        return u0.reshape(grid.shape), 0.0
    res = integrate(op, u0, 0.0, cfg.t_final, dt_max, cfg.node_set(), cfg.controls())
    return res.u.reshape(grid.shape), res.dt


def _run_one(cfg: StudyConfig, index: int):
    # blow-up surfaces as IntegrationError, not as floating-point warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _solve_row(cfg, index)


def _solve_row(cfg: StudyConfig, index: int):
    n = cfg.grids[index]
    if cfg.problem in HEAT_PROBLEMS:
        problem = _heat_problem(cfg)
        grid = Grid2D(n)
        dt = _dt_for(cfg, index, grid, problem)
        u, used = solve_heat(cfg, n, dt)
        if cfg.reference == "Exact":
            ref = problem.exact(*grid.mesh(), cfg.t_final)
        elif cfg.reference == "HighRes":
            ref = restrict_sample(_highres(cfg), grid.shape)
        else:
            ref = _spectral(cfg).sample(grid)
        return n, used, error_norms(u, ref)

    dt = _dt_for(cfg, index, None, None)
    u0 = np.array([1.0])
    if cfg.t_final == 0:
        return n, 0.0, (0.0, 0.0)
    if cfg.problem == "SdcOrderODE":
        lam = cfg.lambda1
        res = integrate(lambda u, t: lam * u, u0, 0.0, cfg.t_final, dt, cfg.node_set(), cfg.controls())
        exact = np.exp(lam * cfg.t_final) * u0
    else:
        if cfg.problem == "MrsdcMode1ODE":
            rhs = make_split_linear(cfg.lambda1, cfg.lambda2)
        else:
            rhs = make_prothero_robinson(cfg.stiffness)
        res = integrate_multirate(
            rhs, u0, 0.0, cfg.t_final, dt, cfg.hierarchy(), cfg.controls(), cfg.stiff_options()
        )
        exact = rhs.exact(cfg.t_final, u0)
    err = float(np.max(np.abs(res.u - exact)))
    return n, res.dt, (err, err)


_CACHE = {}


def _highres(cfg: StudyConfig):
    key = ("HighRes", cfg)
    if key not in _CACHE:
        nref = cfg.reference_resolution
        problem = _heat_problem(cfg)
        grid = Grid2D(nref)
        if cfg.dt_rule == "DiffusiveLimit":
            dt = diffusive_dt(grid, problem)
        else:
            dt = min(_dt_for(cfg, i, Grid2D(g), problem) for i, g in enumerate(cfg.grids))
        _CACHE[key] = solve_heat(cfg, nref, dt)[0]
    return _CACHE[key]


def _spectral(cfg: StudyConfig):
    key = ("Spectral", cfg.problem, cfg.t_final, cfg.reference_resolution)
    if key not in _CACHE:
        _CACHE[key] = spectral_reference(_heat_problem(cfg), cfg.t_final, cfg.reference_resolution)
    return _CACHE[key]


@dataclass(frozen=True)
class CostRow:
    components: int
    extra_flop_time: float
    extra_comm_time: float
    time_delta: float
    crossover_bandwidth: float


COST_HEADER = ("components", "extra_flop_time", "extra_comm_time", "time_delta", "crossover_bandwidth")


def run_cost_study(cfg: StudyConfig) -> list:
    """Cost-model rows, one per component count in ``cfg.grids``."""
    machine = MachineModel(cfg.flops, cfg.bandwidth)
    rows = [
        CostRow(
            n,
            extra_flop_time(n, machine),
            extra_comm_time(machine),
            time_delta(n, machine),
            crossover_bandwidth(n, machine.flops),
        )
        for n in cfg.grids
    ]
    if cfg.output:
        with open(cfg.output, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(COST_HEADER)
            for row in rows:
                writer.writerow([str(row.components)] + [_fmt(getattr(row, k)) for k in COST_HEADER[1:]])
    return rows


def max_workers() -> int:
    """Worker cap from ``NARROWSDC_MAX_WORKERS`` (default: CPU count)."""
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{WORKERS_ENV} must be at least 1")
    return value


def run_study(cfg: StudyConfig, workers: Optional[int] = None) -> list:
    """Run every configured resolution, compute rates and write the CSV.

    Independent resolutions run in separate processes when more than one
    worker is allowed; rows always follow the configured grid order.
    """
    if cfg.problem == "CostModel":
        return run_cost_study(cfg)
    workers = max_workers() if workers is None else workers
    indices = range(len(cfg.grids))
    if workers > 1 and len(cfg.grids) > 1:
        if cfg.reference == "HighRes":
            _highres(cfg)
        with ProcessPoolExecutor(max_workers=min(workers, len(cfg.grids))) as pool:
            results = list(pool.map(_run_one, [cfg] * len(cfg.grids), indices))
    else:
        results = [_run_one(cfg, i) for i in indices]
    rows = [ConvergenceRow(n, dt, linf, l2) for n, dt, (linf, l2) in results]
    rows = compute_rates(rows)
    for row in rows:
        if 0 < row.linf < PRECISION_FLOOR:
            row.notes.append("precision-limited")
            log.warning("resolution %d: error %.3g is precision-limited", row.resolution, row.linf)
    if cfg.output:
        write_csv(rows, cfg.output)
    return rows


HEADER = ("resolution", "dt", "linf", "linf_rate", "l2", "l2_rate")


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else "%.6g" % x


def format_row(row: ConvergenceRow) -> list:
    return [str(row.resolution), _fmt(row.dt), _fmt(row.linf), _fmt(row.linf_rate), _fmt(row.l2), _fmt(row.l2_rate)]


def write_csv(rows: list, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for row in rows:
            writer.writerow(format_row(row))


def read_csv(path: str) -> list:
    """Rows of a study CSV as dictionaries of strings."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return list(reader)


def format_table(rows: list) -> str:
    if rows and isinstance(rows[0], CostRow):
        lines = ["%10s %16s %16s %16s %20s" % COST_HEADER]
        for row in rows:
            lines.append("%10d %16.6g %16.6g %16.6g %20.6g" % tuple(getattr(row, k) for k in COST_HEADER))
        return "\n".join(lines)
    lines = ["%10s %12s %12s %8s %12s %8s" % HEADER]
    for row in rows:
        cells = format_row(row)
        note = ("  " + ", ".join(row.notes)) if row.notes else ""
        lines.append("%10s %12s %12s %8s %12s %8s" % tuple(cells) + note)
    return "\n".join(lines)
