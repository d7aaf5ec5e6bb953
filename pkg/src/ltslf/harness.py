"""Experiment drivers: convergence studies, stability sweeps, the L-shape
run and the runtime comparison of LTS-LF(p) against global leap-frog.

Every driver goes through :func:`prepare`, which turns an
:class:`ExperimentSpec` and a refinement level into a mesh, operators and
initial data.  Outputs are plain dataclasses; writing them to disk is left
to :mod:`ltslf.export` and the CLI.
"""

from __future__ import annotations

import gc
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as sla

from . import export
from .fem import (Discretization, build_discretization, fine_nodes, h1_error, l2_error,
                  project_l2)
from .lts import (AlphaTable, BlowUpError, LoadCache, LtsOperators, SimState,
                  StepConfig, alpha_recursive, discrete_energy, initial_step, leapfrog_step,
                  lts_lf_step, verify_cfl)
from .mesh import (DIRICHLET, Mesh, bisect_elements, build_interval, build_lshape_mesh,
                   build_unit_square, default_threshold, partition_fine, refine_corner)

GEOMETRIES = ("interval", "unit-square", "lshape")
SNAPSHOT_TIMES = (0.0, 0.1, 0.3, 0.4, 0.5, 0.6)
STRIP = (0.4, 0.6)


# ------------------------------------------------------ manufactured data


@dataclass(frozen=True)
class Manufactured:
    """Exact solution u(x, t) of u_tt - Laplace u = f with zero Dirichlet data.

    Callables take coordinates of shape (..., dim) and a time.  ``f`` is
    None for the homogeneous problems.
    """

    dim: int
    u: Callable
    ut: Callable
    grad: Callable
    f: Callable | None

    def u0(self, x):
        return self.u(x, 0.0)

    def v0(self, x):
        return self.ut(x, 0.0)


def _sines(x, dim):
    s = np.ones(x.shape[:-1])
    for d in range(dim):
        s = s * np.sin(np.pi * x[..., d])
    return s


def _sine_grad(x, dim):
    g = np.empty(x.shape[:-1] + (dim,))
    for d in range(dim):
        gd = np.pi * np.cos(np.pi * x[..., d])
        for e in range(dim):
            if e != d:
                gd = gd * np.sin(np.pi * x[..., e])
        g[..., d] = gd
    return g


def manufactured_solution(geometry: str, mode: str = "standing") -> Manufactured:
    """Separable solutions sin(pi x)[sin(pi y)] g(t).

    ``standing``: g = cos(omega t) with omega^2 = dim pi^2, so f = 0.
    ``forced``: g = cos t + t^2/2 with the matching non-zero f.
    """
    dims = {"interval": 1, "unit-square": 2}
    if geometry not in dims:
        raise ValueError(f"no manufactured solution on {geometry!r}")
    dim = dims[geometry]
    k2 = dim * np.pi ** 2
    if mode == "standing":
        w = math.sqrt(k2)
        g, dg = (lambda t: np.cos(w * t)), (lambda t: -w * np.sin(w * t))
        f = None
    elif mode == "forced":
        g, dg = (lambda t: np.cos(t) + 0.5 * t * t), (lambda t: -np.sin(t) + t)

        def f(x, t):
            return _sines(x, dim) * (1.0 - np.cos(t) + k2 * (np.cos(t) + 0.5 * t * t))
    else:
        raise ValueError(f"unknown manufactured mode {mode!r}")
    return Manufactured(
        dim,
        u=lambda x, t: _sines(x, dim) * g(t),
        ut=lambda x, t: _sines(x, dim) * dg(t),
        grad=lambda x, t: _sine_grad(x, dim) * g(t),
        f=f,
    )


# ------------------------------------------------------------ experiments


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to set up one family of runs.

    ``levels`` counts meshes in a spatial study, Δt halvings in a temporal
    one and global refinements in a benchmark.  ``dt_rule`` is "cfl" (safety
    times the spectral critical step) or "fixed" (use ``dt``).  Meshes at
    level k have ``n0 * 2**k`` cells per unit length (interval, square) or
    leg length ``h_init / 2**k`` (L-shape).
    """

    geometry: str = "interval"
    levels: int = 4
    degree: int = 1
    p: int = 2
    T: float = 1.0
    dt_rule: str = "cfl"
    dt: float | None = None
    safety: float = 0.95
    initial: str = "manufactured"
    mode: str = "standing"
    study: str = "space"
    n0: int = 8
    h_init: float = 0.125
    corner_refinements: int = 2
    overlap: int = 1
    lumping: bool = False
    mass_mode: str = "cg"
    delta: float = 0.02
    x0: float = 0.25
    transfer: str = "projection"

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if int(self.levels) != self.levels or self.levels < 1:
            raise ValueError("levels must be a positive integer")
        if self.dt_rule not in ("cfl", "fixed"):
            raise ValueError(f"unknown dt rule {self.dt_rule!r}")
        if self.dt_rule == "fixed" and not (self.dt is not None and self.dt > 0):
            raise ValueError("a fixed dt rule needs dt > 0")
        if self.initial not in ("manufactured", "gaussian"):
            raise ValueError(f"unknown initial data {self.initial!r}")
        if self.study not in ("space", "time"):
            raise ValueError(f"unknown study {self.study!r}")
        if self.transfer not in ("projection", "interpolation"):
            raise ValueError(f"unknown transfer {self.transfer!r}")
        if self.initial == "manufactured" and self.geometry == "lshape":
            raise ValueError("manufactured data are defined on the interval and square only")


def lshape_narrow_spec(**kw) -> ExperimentSpec:
    """L-shape setup with the narrow datum; nodal interpolation keeps it visible."""
    base = dict(geometry="lshape", p=4, T=2.0, initial="gaussian", delta=1e-5, x0=0.25,
                lumping=True, h_init=0.125, corner_refinements=2, overlap=1,
                transfer="interpolation")
    base.update(kw)
    return ExperimentSpec(**base)


def lshape_resolved_spec(**kw) -> ExperimentSpec:
    """L-shape setup with a Gaussian of width 0.02, L2-projected."""
    base = dict(geometry="lshape", p=4, T=2.0, initial="gaussian", delta=0.02, x0=0.25,
                lumping=True, h_init=0.125, corner_refinements=2, overlap=1,
                transfer="projection")
    base.update(kw)
    return ExperimentSpec(**base)


def build_mesh(spec: ExperimentSpec, level: int = 0) -> Mesh:
    """Mesh at a refinement level with its fine region tagged."""
    a, b = STRIP
    if spec.geometry == "interval":
        n = spec.n0 * 2 ** level
        x = np.linspace(0.0, 1.0, n + 1)
        mid = 0.5 * (x[:-1] + x[1:])
        x = np.sort(np.concatenate([x, mid[(mid > a) & (mid < b)]]))
        mesh = build_interval(x, boundary=DIRICHLET)
    elif spec.geometry == "unit-square":
        mesh = build_unit_square(spec.n0 * 2 ** level)
        for _ in range(2):
            cx = mesh.points[mesh.elements][:, :, 0].mean(axis=1)
            mesh = bisect_elements(mesh, np.flatnonzero((cx > a) & (cx < b)))
    else:
        mesh = build_lshape_mesh(spec.h_init / 2 ** level)
        for _ in range(spec.corner_refinements):
            mesh = refine_corner(mesh)
    return partition_fine(mesh, default_threshold(mesh), spec.overlap)


@dataclass
class Problem:
    """A discretized experiment: mesh, operators and projected data."""

    spec: ExperimentSpec
    level: int
    mesh: Mesh
    disc: Discretization
    ops: LtsOperators
    alphas: AlphaTable
    u0: np.ndarray
    v0: np.ndarray
    exact: Manufactured | None
    load_fn: Callable | None = None

    @property
    def h(self) -> float:
        return float(self.mesh.diameters().max())

    def m_norm(self, u) -> float:
        return math.sqrt(max(float(u @ (self.ops.mass @ u)), 0.0))

    def full(self, u) -> np.ndarray:
        return self.disc.dofmap.expand(u)


def _transfer(spec, disc, ops, g):
    if spec.transfer == "interpolation":
        return np.asarray(g(disc.dofmap.nodes), dtype=float)[disc.dofmap.free]
    return project_l2(disc.mesh, disc.dofmap, ops.solver, g)


def _projected_load(mesh, disc, ops, f):
    def load(t):
        return project_l2(mesh, disc.dofmap, ops.solver, lambda x: f(x, t))
    return load


def prepare(spec: ExperimentSpec, level: int = 0, mesh: Mesh | None = None) -> Problem:
    mesh = build_mesh(spec, level) if mesh is None else mesh
    disc = build_discretization(mesh, spec.degree)
    mode = "lumped" if spec.lumping else spec.mass_mode
    ops = LtsOperators.from_discretization(disc, mode)
    alphas = alpha_recursive(spec.p)
    exact = None
    load_fn = None
    if spec.initial == "manufactured":
        exact = manufactured_solution(spec.geometry, spec.mode)
        u0 = _transfer(spec, disc, ops, exact.u0)
        v0 = _transfer(spec, disc, ops, exact.v0)
        if exact.f is not None:
            load_fn = _projected_load(mesh, disc, ops, exact.f)
    else:
        x0, delta = spec.x0, spec.delta

        def gauss(x):
            return np.exp(-((x[..., 0] - x0) / delta) ** 2)

        u0 = _transfer(spec, disc, ops, gauss)
        v0 = np.zeros_like(u0)
    return Problem(spec, level, mesh, disc, ops, alphas, u0, v0, exact, load_fn)


def cfl_dt(problem: Problem, p: int | None = None) -> float:
    """safety * dt_crit for the problem's operators."""
    p = problem.spec.p if p is None else p
    alphas = problem.alphas if p == problem.spec.p else alpha_recursive(p)
    cfg = StepConfig(dt=0.0, p=p, safety=problem.spec.safety)
    return verify_cfl(problem.ops, cfg, alphas).dt_max


def _steps_for(T: float, dt_max: float, times=()) -> int:
    """Smallest step count with T/N <= dt_max that hits every time in ``times``."""
    n = max(1, math.ceil(T / dt_max - 1e-12))
    while any(abs(t * n / T - round(t * n / T)) > 1e-9 for t in times):
        n += 1
    return n


# -------------------------------------------------------------- time loop


@dataclass
class Trajectory:
    state: SimState
    steps: int
    growth: float
    energies: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)


def simulate(problem: Problem, dt: float, nsteps: int, p: int | None = None,
             scheme: str = "lts", ops: LtsOperators | None = None, energy: bool = False,
             snapshot_steps=(), guard: bool = True) -> Trajectory:
    """March ``nsteps`` steps of size dt with LTS-LF(p) or plain leap-frog.

    Growth is max_n ||u^(n)||_M / ||u^(0)||_M.  ``BlowUpError`` propagates.
    """
    p = problem.spec.p if p is None else p
    ops = problem.ops if ops is None else ops
    cfg = StepConfig(dt=dt, p=p if scheme == "lts" else 1, safety=problem.spec.safety)
    alphas = problem.alphas if cfg.p == problem.spec.p else alpha_recursive(cfg.p)
    fn = problem.load_fn
    f0 = None if fn is None else fn(0.0)
    ref = float(np.linalg.norm(problem.u0)) if guard else 0.0
    n0 = problem.m_norm(problem.u0)
    snaps = set(int(s) for s in snapshot_steps)
    traj = Trajectory(None, nsteps, 1.0)
    if 0 in snaps:
        traj.snapshots[0] = problem.u0.copy()
    traj.norms.append(n0)
    state = initial_step(ops, cfg, problem.u0, problem.v0, f0)
    load = LoadCache(fn, dt, cfg.p) if scheme == "lts" else fn
    for step in range(1, nsteps + 1):
        if step > 1:
            if scheme == "lts":
                state = lts_lf_step(ops, cfg, state, load, guard_norm=ref)
            else:
                state = leapfrog_step(ops, dt, state, load, guard_norm=ref)
        nrm = problem.m_norm(state.u_curr)
        traj.norms.append(nrm)
        if n0 > 0:
            traj.growth = max(traj.growth, nrm / n0)
        if energy:
            traj.energies.append(discrete_energy(ops, cfg, alphas, state))
        if step in snaps:
            traj.snapshots[step] = state.u_curr.copy()
    traj.state = state
    return traj


# ------------------------------------------------------------ convergence


@dataclass(frozen=True)
class ConvergenceRow:
    h: float
    dt: float
    l2_error: float
    h1_error: float
    rate: float = math.nan
    failed: bool = False


@dataclass
class ConvergenceTable:
    """Errors at T per level; ``rate`` is log2 of successive L2 error ratios."""

    study: str
    rows: list

    HEADER = ("h", "dt", "l2_error", "h1_error", "rate", "failed")

    @property
    def rates(self) -> np.ndarray:
        return np.array([r.rate for r in self.rows[1:]])

    def as_rows(self):
        return [(r.h, r.dt, r.l2_error, r.h1_error, r.rate, r.failed) for r in self.rows]


def _with_rates(study, rows):
    out = [rows[0]]
    for prev, cur in zip(rows, rows[1:]):
        ok = not (prev.failed or cur.failed) and cur.l2_error > 0
        rate = math.log2(prev.l2_error / cur.l2_error) if ok else math.nan
        out.append(replace(cur, rate=rate))
    return ConvergenceTable(study, out)


def semi_discrete_solution(problem: Problem, t: float) -> np.ndarray:
    """Exact solution of M u'' + A u = 0 at time t from the generalized eigenbasis."""
    if problem.load_fn is not None:
        raise ValueError("the semi-discrete reference covers unforced problems only")
    lam, V = _eigenpairs(problem)
    M = problem.ops.mass
    w = np.sqrt(np.maximum(lam, 0.0))
    a = V.T @ (M @ problem.u0)
    b = V.T @ (M @ problem.v0)
    sinc = np.where(w > 0, np.sin(w * t) / np.where(w > 0, w, 1.0), t)
    return V @ (np.cos(w * t) * a + sinc * b)


def _eigenpairs(problem: Problem):
    return sla.eigh(problem.ops.stiffness.toarray(), problem.ops.mass.toarray())


def low_mode_data(problem: Problem, factor: float = 2.0) -> Problem:
    """Restrict the initial data to discrete modes with lambda <= factor * omega^2.

    The projected manufactured datum carries high-frequency components of
    size O(h^(m+1)) whose leap-frog error is not yet asymptotic at CFL-sized
    steps; removing them isolates the O(dt^2) behaviour.
    """
    lam, V = _eigenpairs(problem)
    keep = lam <= factor * problem.exact.dim * np.pi ** 2
    Vk = V[:, keep]
    M = problem.ops.mass
    return replace(problem, u0=Vk @ (Vk.T @ (M @ problem.u0)),
                   v0=Vk @ (Vk.T @ (M @ problem.v0)))


def _final_errors(problem: Problem, u: np.ndarray, T: float):
    ex = problem.exact
    full = problem.full(u)
    l2 = l2_error(problem.mesh, problem.disc.dofmap, full, lambda x: ex.u(x, T))
    h1 = h1_error(problem.mesh, problem.disc.dofmap, full, lambda x: ex.grad(x, T))
    return l2, h1


def run_convergence(spec: ExperimentSpec) -> ConvergenceTable:
    """Spatial or temporal convergence study against a known solution.

    Space: ``spec.levels`` meshes, dt = c h^((m+1)/2) with c the smaller of
    the CFL ratios on the coarsest and finest mesh; errors against the
    manufactured solution.
    Time: the finest mesh, dt halved ``spec.levels`` times starting from half
    the CFL step; low-mode initial data and errors against the exact
    semi-discrete solution so that the spatial error does not mask the
    O(dt^2) term.  Blow-ups become failed rows.
    """
    if spec.initial != "manufactured":
        raise ValueError("convergence studies need manufactured data")
    rows = []
    if spec.study == "space":
        expo = 0.5 * (spec.degree + 1)
        probs = [prepare(spec, level) for level in range(spec.levels)]
        if spec.dt_rule == "fixed":
            c = spec.dt / probs[0].h ** expo
        else:
            # dt_crit / h is not yet constant on the coarsest meshes; the
            # binding end depends on the exponent
            c = min(cfl_dt(q) / q.h ** expo for q in (probs[0], probs[-1]))
        for prob in probs:
            h = prob.h
            n = _steps_for(spec.T, c * h ** expo)
            dt = spec.T / n
            try:
                traj = simulate(prob, dt, n)
            except BlowUpError:
                rows.append(ConvergenceRow(h, dt, math.inf, math.inf, failed=True))
                continue
            rows.append(ConvergenceRow(h, dt, *_final_errors(prob, traj.state.u_curr, spec.T)))
        return _with_rates("space", rows)

    prob = low_mode_data(prepare(spec, spec.levels - 1))
    ref = semi_discrete_solution(prob, spec.T)
    A1 = prob.disc.unit_stiffness
    # the first halving from the CFL step itself is pre-asymptotic for p > 1
    dt0 = spec.dt if spec.dt_rule == "fixed" else 0.5 * cfl_dt(prob)
    n0 = _steps_for(spec.T, dt0)
    for k in range(spec.levels + 1):
        n = n0 * 2 ** k
        dt = spec.T / n
        try:
            traj = simulate(prob, dt, n)
        except BlowUpError:
            rows.append(ConvergenceRow(prob.h, dt, math.inf, math.inf, failed=True))
            continue
        e = traj.state.u_curr - ref
        l2 = prob.m_norm(e)
        h1 = math.sqrt(l2 ** 2 + max(float(e @ (A1 @ e)), 0.0))
        rows.append(ConvergenceRow(prob.h, dt, l2, h1))
    return _with_rates("time", rows)


# -------------------------------------------------------------- stability


@dataclass(frozen=True)
class StabilityResult:
    dt: float
    stable: bool
    growth: float
    steps: int


def stability_run(problem: Problem, dt: float, steps: int = 2000, p: int | None = None,
                  limit: float = 10.0) -> StabilityResult:
    """Stable iff no blow-up and max ||u||_M / ||u0||_M <= limit."""
    try:
        traj = simulate(problem, dt, steps, p=p)
    except BlowUpError:
        return StabilityResult(dt, False, math.inf, steps)
    return StabilityResult(dt, bool(traj.growth <= limit), traj.growth, steps)


def run_stability_sweep(spec: ExperimentSpec, dt_grid, steps: int = 2000,
                        problem: Problem | None = None) -> list:
    if spec.initial == "manufactured" and spec.mode != "standing":
        raise ValueError("stability sweeps need f = 0")
    problem = prepare(spec) if problem is None else problem
    if not np.any(problem.u0):
        raise ValueError("stability sweeps need non-zero initial data")
    return [stability_run(problem, float(dt), steps) for dt in dt_grid]


def empirical_dt_max(problem: Problem, lo: float, hi: float, steps: int = 2000,
                     rel_tol: float = 2e-3) -> float:
    """Bisect the stable/unstable transition between a stable lo and unstable hi."""
    if not stability_run(problem, lo, steps).stable:
        raise ValueError("lower bracket is not stable")
    if stability_run(problem, hi, steps).stable:
        raise ValueError("upper bracket is not unstable")
    while hi - lo > rel_tol * lo:
        mid = 0.5 * (lo + hi)
        if stability_run(problem, mid, steps).stable:
            lo = mid
        else:
            hi = mid
    return lo


# ----------------------------------------------------------------- timing


@dataclass(frozen=True)
class WorkModel:
    coarse_rhs_evals: int
    fine_rhs_evals: int
    predicted_speedup: float


def work_model(mesh: Mesh, dofmap, cfg: StepConfig) -> WorkModel:
    """Operator-row counts per global step.

    Global leap-frog at dt/p touches every row p times.  LTS touches the
    non-fine rows once and the fine patch (fine nodes and their stiffness
    neighbours) p times.
    """
    free = dofmap.free
    fine = fine_nodes(mesh, dofmap)
    touched = np.zeros(dofmap.n_dofs, dtype=bool)
    cells = dofmap.cell_dofs
    touched[cells[np.any(fine[cells], axis=1)].ravel()] = True
    n_total = len(free)
    n_fine = int(fine[free].sum())
    n_patch = int(touched[free].sum())
    coarse = n_total - n_fine
    fine_evals = cfg.p * n_patch
    lts = coarse + fine_evals
    return WorkModel(coarse, fine_evals, cfg.p * n_total / lts if lts else 1.0)


@dataclass(frozen=True)
class RuntimeLevel:
    level: int
    n_dofs: int
    n_coarse: int
    n_fine: int
    steps: int
    time_lts: float
    time_lf: float
    speedup: float
    predicted: float


@dataclass
class RuntimeReport:
    p: int
    levels: list

    HEADER = ("level", "n_dofs", "n_coarse", "n_fine", "steps", "time_lts", "time_lf",
              "speedup", "predicted_speedup")

    @property
    def speedups(self) -> np.ndarray:
        return np.array([r.speedup for r in self.levels])

    def as_rows(self):
        return [(r.level, r.n_dofs, r.n_coarse, r.n_fine, r.steps, r.time_lts, r.time_lf,
                 r.speedup, r.predicted) for r in self.levels]


def _timed(fns, repeats):
    """Median wall time of each callable; runs are interleaved so that slow
    drifts of the machine load affect all of them alike."""
    times = [[] for _ in fns]
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            for fn, acc in zip(fns, times):
                t0 = time.perf_counter()
                fn()
                acc.append(time.perf_counter() - t0)
    finally:
        if enabled:
            gc.enable()
    return [float(np.median(acc)) for acc in times]


def time_level(problem: Problem, dt: float, steps: int, repeats: int = 3) -> RuntimeLevel:
    """Median wall time of LTS-LF(p) at dt against global leap-frog at dt/p."""
    p = problem.spec.p
    ops = problem.ops
    cfg = StepConfig(dt=dt, p=p)
    cfg_lf = StepConfig(dt=dt / p, p=1)
    s0 = initial_step(ops, cfg, problem.u0, problem.v0)
    s0_lf = initial_step(ops, cfg_lf, problem.u0, problem.v0)

    def run_lts():
        s = s0
        for _ in range(steps):
            s = lts_lf_step(ops, cfg, s)

    def run_lf():
        s = s0_lf
        for _ in range(p * steps):
            s = leapfrog_step(ops, cfg_lf.dt, s)

    t_lts, t_lf = _timed((run_lts, run_lf), repeats)
    wm = work_model(problem.mesh, problem.disc.dofmap, cfg)
    n = problem.ops.n
    n_fine = int(np.count_nonzero(ops.fine_weights))
    return RuntimeLevel(problem.level, n, n - n_fine, n_fine, steps, t_lts, t_lf,
                        t_lf / t_lts, wm.predicted_speedup)


def run_benchmark(spec: ExperimentSpec, steps: int = 1000, repeats: int = 3) -> RuntimeReport:
    """Runtime comparison over ``spec.levels`` global refinement levels."""
    levels = []
    for level in range(spec.levels):
        prob = prepare(spec, level)
        dt = spec.dt if spec.dt_rule == "fixed" else cfl_dt(prob)
        levels.append(time_level(prob, dt, steps, repeats))
    return RuntimeReport(spec.p, levels)


# ---------------------------------------------------------------- L-shape


@dataclass
class LShapeResult:
    dt: float
    steps: int
    snapshots: dict
    energies: list
    norms: list
    energy_drift: float
    agreement: float
    runtime: RuntimeReport
    files: list = field(default_factory=list)


ENERGY_HEADER = ("n", "t", "kinetic", "potential", "total", "l2_norm")


def energy_drift(energies) -> float:
    e0 = energies[0].total
    return max(abs(e.total - e0) for e in energies) / abs(e0)


def run_lshape(spec: ExperimentSpec, out_dir=None, snapshot_times=SNAPSHOT_TIMES,
               repeats: int = 3, problem: Problem | None = None) -> LShapeResult:
    """LTS-LF(p) run with energy log and snapshots, plus the leap-frog reference at dt/p.

    dt is the largest step below the CFL bound that lands on every snapshot
    time and on T.  ``agreement`` is ||u_lts(T) - u_lf(T)||_M / ||u_lf(T)||_M.
    """
    if spec.geometry != "lshape":
        raise ValueError("run_lshape needs the L-shape geometry")
    problem = prepare(spec) if problem is None else problem
    dt_max = spec.dt if spec.dt_rule == "fixed" else cfl_dt(problem)
    n = _steps_for(spec.T, dt_max, snapshot_times)
    dt = spec.T / n
    snap_steps = [int(round(t / dt)) for t in snapshot_times]
    try:
        lts = simulate(problem, dt, n, energy=True, snapshot_steps=snap_steps)
    except BlowUpError as exc:
        raise BlowUpError(f"LTS-LF({spec.p}) run with dt={dt:.6g} failed: {exc}") from exc
    try:
        lf = simulate(problem, dt / spec.p, n * spec.p, scheme="lf")
    except BlowUpError as exc:
        raise BlowUpError(f"reference leap-frog with dt={dt / spec.p:.6g} failed: {exc}") from exc
    diff = problem.m_norm(lts.state.u_curr - lf.state.u_curr)
    agreement = diff / problem.m_norm(lf.state.u_curr)
    runtime = RuntimeReport(spec.p, [time_level(problem, dt, n, repeats)])
    res = LShapeResult(dt, n, lts.snapshots, lts.energies, lts.norms,
                       energy_drift(lts.energies), agreement, runtime)
    if out_dir is not None:
        res.files = write_lshape_outputs(problem, res, out_dir)
    return res


def write_lshape_outputs(problem: Problem, res: LShapeResult, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for step, u in sorted(res.snapshots.items()):
        path = out / f"snapshot_{step:06d}.vtk"
        export.write_vtk(path, problem.mesh, {"u": problem.full(u)},
                         title=f"u at t={step * res.dt:.6g}")
        files.append(path)
    rows = [(e.n, e.t, e.kinetic, e.potential, e.total, res.norms[e.n])
            for e in res.energies]
    export.write_csv(out / "energy.csv", ENERGY_HEADER, rows)
    export.write_csv(out / "runtime.csv", RuntimeReport.HEADER, res.runtime.as_rows())
    return files + [out / "energy.csv", out / "runtime.csv"]
