"""Fine-scale and homogenised evolution solves on the unit box.

Both solvers integrate  du/dt - div a(.; grad u) = f  with homogeneous
Dirichlet boundary and implicit Euler time stepping (unconditionally stable
for monotone fluxes, first-order in time; acceptance of the pipeline is
asymptotic in the scale parameter, not high order in dt).  Every step is a
monotone spatial system solved by the same damped fixed-point iteration as
the cell solver, preconditioned with the shifted Dirichlet Laplacian (DST).

`solve_direct` evaluates the microscopic flux at (x/eps_spatial,
t/eps_1', ..., t/eps_m') and refuses meshes that do not resolve the
microstructure; `solve_homogenized` replaces it by the effective flux and
carries no resolution requirement.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, NonConvergence, UnderResolved
from .expressions import Expression, as_expression
from .flux import FluxModel
from .fourier import DirichletLaplacian
from .homogenizer import HomogenizedFlux
from .iteration import damped_fixed_point
from .scales import ScalePair

logger = logging.getLogger(__name__)

__all__ = [
    "EvolutionProblem",
    "MacroMesh",
    "EpsilonInstance",
    "SolutionField",
    "solve_direct",
    "solve_homogenized",
    "save_field",
]

E_INV = math.exp(-1.0)


@dataclass(frozen=True)
class EvolutionProblem:
    """Dirichlet evolution problem on (0,1)^dim x (0,T).

    ``source`` and ``initial`` are grammar expressions of (x, t) and x so
    configs reproduce bit-exactly; the initial value must vanish on the
    boundary (checked at mesh nodes when solving).
    """

    dim: int
    final_time: float
    source: Expression
    initial: Expression

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError("problem dimension must be 1 or 2")
        if self.final_time <= 0:
            raise ConfigError("final time must be positive")
        object.__setattr__(self, "source", as_expression(self.source))
        object.__setattr__(self, "initial", as_expression(self.initial))


@dataclass(frozen=True)
class MacroMesh:
    nx: int
    nt: int

    def __post_init__(self):
        if self.nx < 2 or self.nt < 1:
            raise ConfigError("macro mesh needs nx >= 2 and nt >= 1")

    @classmethod
    def parse(cls, spec) -> "MacroMesh":
        if isinstance(spec, MacroMesh):
            return spec
        return cls(int(spec["nx"]), int(spec["nt"]))


@dataclass(frozen=True)
class EpsilonInstance:
    """A concrete value of the scale parameter with its realised scales.

    eps is restricted to (0, exp(-1)) so |log eps| > 1 and the log-power
    scale functions are monotone over the sweep range.
    """

    pair: ScalePair
    eps: float
    spatial_value: float = field(init=False)
    realized: tuple = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.eps < E_INV:
            raise ConfigError(f"eps must lie in (0, e^-1); got {self.eps}")
        if len(self.pair.spatial) != 1:
            raise ConfigError("the evolution problem uses a single spatial microscale")
        object.__setattr__(self, "spatial_value", self.pair.spatial[0].realize(self.eps))
        object.__setattr__(
            self, "realized", tuple(s.realize(self.eps) for s in self.pair.temporal)
        )


@dataclass
class SolutionField:
    """Space-time grid solution with its discrete norms.

    ``values`` holds the full node grid including the (identically zero)
    boundary rows, shape (nt+1,) plus (nx+1,) per spatial axis.
    """

    dim: int
    nx: int
    nt: int
    final_time: float
    values: np.ndarray
    norms: dict
    eps: float | None = None

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.final_time, self.nt + 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx + 1)


@lru_cache(maxsize=32)
def _dirichlet_laplacian(dim: int, n: int, shift: float) -> DirichletLaplacian:
    return DirichletLaplacian(dim, n, shift)


@lru_cache(maxsize=32)
def _macro_face_coords(dim: int, nx: int, d: int) -> np.ndarray:
    """Coordinates of d-face midpoints adjacent to interior nodes."""
    h = 1.0 / nx
    axes = []
    for e in range(dim):
        if e == d:
            axes.append((np.arange(nx) + 0.5) * h)
        else:
            axes.append(np.arange(1, nx) * h)
    mesh = np.meshgrid(*axes, indexing="ij")
    out = np.stack(mesh, axis=-1)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _interior_coords(dim: int, nx: int) -> tuple:
    coords = np.arange(1, nx) * (1.0 / nx)
    mesh = np.meshgrid(*([coords] * dim), indexing="ij")
    for arr in mesh:
        arr.setflags(write=False)
    return tuple(mesh)


def dirichlet_face_gradient(u_full: np.ndarray, d: int, h: float) -> np.ndarray:
    """Gradient vector at the d-face midpoints next to interior nodes.

    ``u_full`` carries the boundary nodes (zero); the result has the d-axis
    of length nx and the other axes restricted to the nx-1 interior nodes.
    """
    dim = u_full.ndim
    comps = []
    for e in range(dim):
        if e == d:
            g = np.diff(u_full, axis=d) / h
            sl = tuple(slice(None) if a == d else slice(1, -1) for a in range(dim))
            comps.append(g[sl])
        else:
            sl_p = tuple(slice(2, None) if a == e else slice(None) for a in range(dim))
            sl_m = tuple(slice(None, -2) if a == e else slice(None) for a in range(dim))
            central = (u_full[sl_p] - u_full[sl_m]) / (2.0 * h)
            sl_lo = tuple(slice(None, -1) if a == d else slice(None) for a in range(dim))
            sl_hi = tuple(slice(1, None) if a == d else slice(None) for a in range(dim))
            comps.append(0.5 * (central[sl_lo] + central[sl_hi]))
    return np.stack(comps, axis=-1)


def _dirichlet_divergence(faces: list[np.ndarray], h: float) -> np.ndarray:
    div = None
    for d, f in enumerate(faces):
        contrib = np.diff(f, axis=d) / h
        div = contrib if div is None else div + contrib
    return div


def _embed(v_interior: np.ndarray, dim: int, nx: int) -> np.ndarray:
    full = np.zeros((nx + 1,) * dim)
    full[tuple(slice(1, -1) for _ in range(dim))] = v_interior
    return full


def _march(
    problem: EvolutionProblem,
    mesh: MacroMesh,
    face_flux,
    tau: float,
    tol: float,
    max_iter: int,
    eps: float | None,
) -> SolutionField:
    """Implicit Euler march; ``face_flux(t, u_full)`` returns the d-face fluxes."""
    dim, nx, nt = problem.dim, mesh.nx, mesh.nt
    h = 1.0 / nx
    dt = problem.final_time / nt
    h_weight = h**dim
    lap = _dirichlet_laplacian(dim, nx, 1.0 / dt)
    interior = _interior_coords(dim, nx)
    interior_sl = tuple(slice(1, -1) for _ in range(dim))

    nodes_full = np.meshgrid(*([np.linspace(0.0, 1.0, nx + 1)] * dim), indexing="ij")
    u_full = np.asarray(problem.initial(x=tuple(nodes_full)), dtype=float)
    u_full = np.broadcast_to(u_full, (nx + 1,) * dim).copy()
    boundary = u_full.copy()
    boundary[interior_sl] = 0.0
    if np.max(np.abs(boundary)) > 1e-12:
        raise ConfigError("initial value must vanish on the boundary")
    u_full[~np.isfinite(u_full)] = 0.0

    values = np.empty((nt + 1,) + (nx + 1,) * dim)
    values[0] = u_full
    grad_sq_time = np.empty(nt)
    dual_sq_time = np.empty(nt)
    lap0 = _dirichlet_laplacian(dim, nx, 0.0)

    for n in range(1, nt + 1):
        t_next = n * dt
        f_vec = np.asarray(problem.source(x=interior, t=t_next), dtype=float)
        f_vec = np.broadcast_to(f_vec, (nx - 1,) * dim)
        prev = u_full[interior_sl]

        def residual(v, prev=prev, t_next=t_next, f_vec=f_vec):
            emb = _embed(v, dim, nx)
            div = _dirichlet_divergence(face_flux(t_next, emb), h)
            return (v - prev) / dt - div - f_vec

        result = damped_fixed_point(
            residual, lap.solve, prev, tau, tol, max_iter, h_weight
        )
        if not result.converged:
            raise NonConvergence(
                f"time step {n}/{nt} stalled at residual {result.residual:.3e} "
                f"(tol {tol:.1e})",
                iterations=result.iterations,
                residual=result.residual,
                loop="time_step",
            )
        u_full = _embed(result.u, dim, nx)
        values[n] = u_full
        grad_sq_time[n - 1] = sum(
            np.sum((np.diff(u_full, axis=d) / h) ** 2) for d in range(dim)
        ) * h_weight
        diff = (values[n] - values[n - 1])[interior_sl] / dt
        dual_sq_time[n - 1] = lap0.dual_norm(diff, h_weight) ** 2

    w_time = np.full(nt + 1, dt)
    w_time[0] = w_time[-1] = 0.5 * dt
    l2_space_time = float(
        np.sqrt(np.sum(w_time * np.sum(values.reshape(nt + 1, -1) ** 2, axis=1) * h_weight))
    )
    norms = {
        "l2_space_time": l2_space_time,
        "l2_h01": float(np.sqrt(dt * np.sum(grad_sq_time))),
        "dual_norm_estimate": float(np.sqrt(dt * np.sum(dual_sq_time))),
    }
    return SolutionField(
        dim=dim,
        nx=nx,
        nt=nt,
        final_time=problem.final_time,
        values=values,
        norms=norms,
        eps=eps,
    )


def required_resolution(
    problem: EvolutionProblem, inst: EpsilonInstance, rho: float
) -> tuple[int, int]:
    """Smallest (nx, nt) resolving the microstructure with factor rho."""
    nx_req = math.ceil(rho / inst.spatial_value)
    nt_req = math.ceil(rho * problem.final_time / min(inst.realized))
    return nx_req, nt_req


def solve_direct(
    problem: EvolutionProblem,
    flux: FluxModel,
    inst: EpsilonInstance,
    mesh,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    rho: float = 8.0,
) -> SolutionField:
    """Solve the fine-scale problem at one concrete scale parameter value.

    The mesh must satisfy nx >= rho/eps_spatial and nt >= rho*T/eps_m'
    (smallest realised temporal scale); otherwise UnderResolved is raised
    with the required sizes.
    """
    mesh = MacroMesh.parse(mesh)
    if flux.dim != problem.dim:
        raise ConfigError("flux and problem dimensions differ")
    if len(inst.pair.temporal) != flux.n_temporal:
        raise ConfigError("flux temporal arity differs from the scale pair")
    nx_req, nt_req = required_resolution(problem, inst, rho)
    if mesh.nx < nx_req or mesh.nt < nt_req:
        raise UnderResolved(
            f"mesh ({mesh.nx}, {mesh.nt}) does not resolve the microstructure; "
            f"need nx >= {nx_req} and nt >= {nt_req} at resolution factor {rho}",
            required_nx=nx_req,
            required_nt=nt_req,
        )

    dim, nx = problem.dim, mesh.nx
    h = 1.0 / nx
    inv_eps = 1.0 / inst.spatial_value
    inv_temporal = np.array([1.0 / v for v in inst.realized])
    tau = min(1.0, flux.c0) / max(1.0, flux.c1) ** 2

    def face_flux(t, u_full):
        s_vec = t * inv_temporal
        out = []
        for d in range(dim):
            coords = _macro_face_coords(dim, nx, d)
            k = dirichlet_face_gradient(u_full, d, h)
            a = flux(coords, t, coords * inv_eps, s_vec, k)
            out.append(a[..., d])
        return out

    return _march(problem, mesh, face_flux, tau, tol, max_iter, eps=inst.eps)


def solve_homogenized(
    problem: EvolutionProblem,
    fluxH: HomogenizedFlux,
    mesh,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> SolutionField:
    """Solve the effective problem with the homogenised flux (no microstructure)."""
    mesh = MacroMesh.parse(mesh)
    if fluxH.dim != problem.dim:
        raise ConfigError("flux and problem dimensions differ")
    dim, nx = problem.dim, mesh.nx
    h = 1.0 / nx
    tau = min(1.0, fluxH.c0) / max(1.0, fluxH.c1) ** 2

    def face_flux(t, u_full):
        out = []
        for d in range(dim):
            coords = _macro_face_coords(dim, nx, d)
            k = dirichlet_face_gradient(u_full, d, h)
            b = _eval_hom(fluxH, coords, t, k)
            out.append(b[..., d])
        return out

    return _march(problem, mesh, face_flux, tau, tol, max_iter, eps=None)


def _eval_hom(fluxH: HomogenizedFlux, x, t, k: np.ndarray) -> np.ndarray:
    if fluxH.mode == "tabulated":
        return fluxH(x, t, k)
    flat = k.reshape(-1, k.shape[-1])
    x_flat = np.asarray(x).reshape(-1, k.shape[-1])
    out = np.stack(
        [fluxH.evaluate_direct(x_flat[i], float(t), flat[i]) for i in range(flat.shape[0])]
    )
    return out.reshape(k.shape)


def save_field(fieldobj: SolutionField, stem: str) -> tuple[str, str]:
    """CSV (rows = time levels, columns = flattened space nodes) + JSON sidecar."""
    sidecar = {
        "dim": fieldobj.dim,
        "nx": fieldobj.nx,
        "nt": fieldobj.nt,
        "final_time": fieldobj.final_time,
        "eps": fieldobj.eps,
        "norms": fieldobj.norms,
        "layout": "rows = time levels 0..nt; columns = space nodes in row-major order",
    }
    json_path, csv_path = f"{stem}.json", f"{stem}.csv"
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    np.savetxt(
        csv_path,
        fieldobj.values.reshape(fieldobj.nt + 1, -1),
        delimiter=",",
        fmt="%.17g",
    )
    return json_path, csv_path
