"""Regime-dependent local (cell) problems for the corrector on the unit cell.

Four solvers cover the four corrector characterisations:

* `solve_elliptic_cell`            -div_y a(., s; xi + grad_y u1) = 0
* `solve_parabolic_cell`           d_{s_m} u1 - div_y a = 0, 1-periodic in s_m
* `solve_averaged_elliptic_cell`   elliptic with the flux averaged over the
                                   rapid temporal coordinates s_{lbar..m}
* `solve_averaged_parabolic_cell`  time-periodic in s_{lring-1} with the flux
                                   averaged over s_{lring..m}

`solve_local` dispatches on a RegimeClassification.

Discretisation: second-order centred differences on a uniform periodic grid.
Fluxes are evaluated at staggered face midpoints so the discrete divergence
is exactly adjoint to the discrete gradient (discrete integration by parts),
which makes the discrete problem itself a monotone system in 1d and for
linear isotropic fluxes in 2d; the tangential-average coupling of a
nonlinear flux in 2d can shave the effective monotonicity margin, which the
iteration surfaces as slow convergence rather than silent error.

The nonlinear systems are solved by a damped fixed-point iteration with the
fixed damping c0/c1**2, preconditioned by the exactly inverted periodic
Laplacian (FFT) restricted to mean-zero functions; implicit Euler steps use
the shifted Laplacian.  The corrector is represented by its mean-zero
representative, enforced by subtracting the cell average after every update.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import NonConvergence
from .flux import FluxModel
from .fourier import PeriodicLaplacian
from .iteration import damped_fixed_point
from .scales import RegimeClassification, RegimeKind

logger = logging.getLogger(__name__)

__all__ = [
    "PeriodicGrid",
    "CellSolution",
    "averaged_flux",
    "solve_elliptic_cell",
    "solve_parabolic_cell",
    "solve_averaged_elliptic_cell",
    "solve_averaged_parabolic_cell",
    "solve_local",
    "save_cell_solution",
]

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid: ny points per cell axis, ns per temporal axis."""

    dim: int
    ny: int
    ns: int = 8

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("cell dimension must be 1 or 2")
        if self.ny < 4 or self.ns < 4:
            raise ValueError("need at least 4 points per cell axis")

    @property
    def h_y(self) -> float:
        return 1.0 / self.ny

    @property
    def h_s(self) -> float:
        return 1.0 / self.ns

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.ny,) * self.dim

    def s_midpoints(self) -> np.ndarray:
        return (np.arange(self.ns) + 0.5) / self.ns

    def to_json(self) -> dict:
        return {"dim": self.dim, "ny": self.ny, "ns": self.ns}


@dataclass
class CellSolution:
    """Mean-zero corrector on the cell grid with its discrete y-gradient.

    ``values`` has shape (ny,)*dim for elliptic solves and (ns,) + (ny,)*dim
    for time-periodic ones (axis 0 runs over the marching nodes j/ns).
    ``grad_y`` prepends a direction axis to the same layout and holds the
    face-midpoint differences, direction d at the faces between node j and
    j+1 along axis d.
    """

    values: np.ndarray
    grad_y: np.ndarray
    mean: float
    residual: float
    iterations: int
    grid: PeriodicGrid
    regime: str
    diagnostics: dict = field(default_factory=dict)


@lru_cache(maxsize=64)
def _laplacian(dim: int, n: int, shift: float) -> PeriodicLaplacian:
    return PeriodicLaplacian(dim, n, shift)


@lru_cache(maxsize=64)
def _face_coords(dim: int, ny: int, d: int) -> np.ndarray:
    """Cell coordinates of the staggered d-face midpoints, shape (ny,)*dim+(dim,)."""
    h = 1.0 / ny
    axes = []
    for e in range(dim):
        coords = np.arange(ny) * h
        if e == d:
            coords = coords + 0.5 * h
        axes.append(coords)
    mesh = np.meshgrid(*axes, indexing="ij")
    out = np.stack(mesh, axis=-1)
    out.setflags(write=False)
    return out


def face_gradient(u: np.ndarray, d: int, h: float) -> np.ndarray:
    """Full gradient vector at the d-face midpoints of a periodic array.

    The normal component is the difference across the face; transverse
    components average the nodal central differences of the two nodes the
    face joins.  Shape: u.shape + (dim,).
    """
    dim = u.ndim
    comps = []
    for e in range(dim):
        if e == d:
            comps.append((np.roll(u, -1, axis=d) - u) / h)
        else:
            central = (np.roll(u, -1, axis=e) - np.roll(u, 1, axis=e)) / (2.0 * h)
            comps.append(0.5 * (central + np.roll(central, -1, axis=d)))
    return np.stack(comps, axis=-1)


def face_fluxes(
    flux: FluxModel,
    macro: tuple,
    xi: np.ndarray,
    s_vec: np.ndarray,
    u: np.ndarray,
    grid: PeriodicGrid,
) -> list[np.ndarray]:
    """Normal flux components a_d(x, t, y_face, s; xi + grad u) per direction."""
    x, t = macro
    h = grid.h_y
    out = []
    for d in range(grid.dim):
        k = xi + face_gradient(u, d, h)
        a = flux(x, t, _face_coords(grid.dim, grid.ny, d), s_vec, k)
        out.append(a[..., d])
    return out


def _divergence(face_values: list[np.ndarray], h: float) -> np.ndarray:
    div = np.zeros_like(face_values[0])
    for d, f in enumerate(face_values):
        div = div + (f - np.roll(f, 1, axis=d)) / h
    return div


def _mean_zero(u: np.ndarray) -> np.ndarray:
    u -= u.mean()
    return u


def _as_s_vector(s, expected: int, name: str) -> np.ndarray:
    s_vec = np.atleast_1d(np.asarray(s, dtype=float)) if s is not None else np.zeros(expected)
    if s_vec.shape != (expected,):
        raise ValueError(f"{name} must have {expected} components, got shape {s_vec.shape}")
    return s_vec


def _as_xi(xi, dim: int) -> np.ndarray:
    xi_vec = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi_vec.shape != (dim,):
        raise ValueError(f"xi must have {dim} components, got shape {xi_vec.shape}")
    return xi_vec


def solve_elliptic_cell(
    flux: FluxModel,
    macro: tuple,
    xi,
    s,
    grid: PeriodicGrid,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    u0: np.ndarray | None = None,
) -> CellSolution:
    """Solve -div_y a(x, t, y, s; xi + grad_y u1) = 0 on the periodic cell.

    Returns the mean-zero corrector with discrete divergence below ``tol``
    in the L2(Y) norm.  Raises NonConvergence when the iteration budget runs
    out, which signals either claimed constants that do not hold or a grid
    too coarse for the requested tolerance.
    """
    xi_vec = _as_xi(xi, flux.dim)
    s_vec = _as_s_vector(s, flux.n_temporal, "s")
    lap = _laplacian(grid.dim, grid.ny, 0.0)
    h_weight = grid.h_y**grid.dim

    def residual(u):
        return -_divergence(face_fluxes(flux, macro, xi_vec, s_vec, u, grid), grid.h_y)

    start = np.zeros(grid.shape) if u0 is None else u0
    result = damped_fixed_point(
        residual, lap.solve, start, flux.damping, tol, max_iter, h_weight, project=_mean_zero
    )
    if not result.converged:
        raise NonConvergence(
            f"elliptic cell solve stalled at residual {result.residual:.3e} "
            f"after {result.iterations} iterations (tol {tol:.1e})",
            iterations=result.iterations,
            residual=result.residual,
            loop="elliptic_cell",
        )
    u = result.u
    grad = np.stack([face_gradient(u, d, grid.h_y)[..., d] for d in range(grid.dim)])
    return CellSolution(
        values=u,
        grad_y=grad,
        mean=float(u.mean()),
        residual=result.residual,
        iterations=result.iterations,
        grid=grid,
        regime="elliptic",
        diagnostics={"dual_history": result.dual_history},
    )


def solve_parabolic_cell(
    flux: FluxModel,
    macro: tuple,
    xi,
    s_head,
    grid: PeriodicGrid,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    period_tol: float | None = None,
    max_sweeps: int = 200,
) -> CellSolution:
    """Solve the time-periodic system d_s u1 - div_y a(..; xi + grad u1) = 0.

    The marching coordinate is the last temporal argument of the flux; the
    leading m-1 coordinates are frozen at ``s_head``.  Implicit Euler steps
    over one period (each step an elliptic monotone solve with the shifted
    Laplacian preconditioner) are wrapped in a period-map fixed point: the
    end state is fed back as the initial state until the sweep is 1-periodic
    to ``period_tol``.  Step failures and period-loop failures are reported
    as distinct NonConvergence loops.
    """
    m = flux.n_temporal
    if m < 1:
        raise ValueError("parabolic cell solve needs a marching temporal coordinate")
    xi_vec = _as_xi(xi, flux.dim)
    head = _as_s_vector(s_head, m - 1, "s_head")
    period_tol = tol if period_tol is None else period_tol

    ns, ds = grid.ns, grid.h_s
    h_weight = grid.h_y**grid.dim
    lap_step = _laplacian(grid.dim, grid.ny, 1.0 / ds)
    tau = min(1.0, flux.c0) / max(1.0, flux.c1) ** 2

    states = [np.zeros(grid.shape) for _ in range(ns)]
    w = states[0]
    total_iterations = 0
    worst_step_residual = 0.0
    drift = np.inf
    for sweep in range(1, max_sweeps + 1):
        w_start = w
        prev = w_start
        new_states = []
        for j in range(1, ns + 1):
            s_vec = np.concatenate([head, [(j * ds) % 1.0]])

            def step_residual(v, prev=prev, s_vec=s_vec):
                ell = -_divergence(
                    face_fluxes(flux, macro, xi_vec, s_vec, v, grid), grid.h_y
                )
                return (v - prev) / ds + ell

            result = damped_fixed_point(
                step_residual,
                lap_step.solve,
                states[j % ns],
                tau,
                tol,
                max_iter,
                h_weight,
                project=_mean_zero,
            )
            total_iterations += result.iterations
            worst_step_residual = max(worst_step_residual, result.residual)
            if not result.converged:
                raise NonConvergence(
                    f"implicit step {j}/{ns} of sweep {sweep} stalled at residual "
                    f"{result.residual:.3e} (tol {tol:.1e})",
                    iterations=result.iterations,
                    residual=result.residual,
                    loop="parabolic_step",
                )
            prev = result.u
            new_states.append(result.u)
        w = new_states[-1]
        drift = float(np.sqrt(h_weight * np.sum((w - w_start) ** 2)))
        states = [w] + new_states[:-1]
        if drift <= period_tol:
            break
    else:
        raise NonConvergence(
            f"period map did not become 1-periodic: drift {drift:.3e} after "
            f"{max_sweeps} sweeps (tol {period_tol:.1e})",
            iterations=total_iterations,
            residual=drift,
            loop="period_map",
        )

    values = np.stack(states)
    grad = np.stack(
        [
            np.stack([face_gradient(states[j], d, grid.h_y)[..., d] for d in range(grid.dim)])
            for j in range(ns)
        ]
    )
    lap0 = _laplacian(grid.dim, grid.ny, 0.0)
    dsq = 0.0
    for j in range(ns):
        dj = (values[(j + 1) % ns] - values[j]) / ds
        z = lap0.solve(dj - dj.mean())
        dsq += max(h_weight * np.sum(z * (dj - dj.mean())), 0.0)
    time_derivative_norm = float(np.sqrt(ds * dsq))

    return CellSolution(
        values=values,
        grad_y=grad,
        mean=float(np.max(np.abs(values.mean(axis=tuple(range(1, values.ndim)))))),
        residual=max(drift, 0.0),
        iterations=total_iterations,
        grid=grid,
        regime="parabolic",
        diagnostics={
            "period_drift": drift,
            "worst_step_residual": worst_step_residual,
            "time_derivative_dual_norm": time_derivative_norm,
        },
    )


def averaged_flux(flux: FluxModel, n_kept: int, ns: int) -> FluxModel:
    """Average the flux over its trailing temporal coordinates.

    Keeps the first ``n_kept`` temporal arguments and replaces the remaining
    ones by their midpoint-rule average on ``ns`` points per coordinate
    (spectrally accurate for the smooth periodic built-in fluxes).  The
    averaged flux inherits c0 and c1: averaging is a convex combination of
    maps sharing the same constants.
    """
    m = flux.n_temporal
    if not 0 <= n_kept <= m:
        raise ValueError(f"n_kept must lie in [0, {m}], got {n_kept}")
    n_avg = m - n_kept
    if n_avg == 0:
        return flux
    mids = (np.arange(ns) + 0.5) / ns
    combos = np.array(list(itertools.product(mids, repeat=n_avg)))  # (Q, n_avg)
    q = combos.shape[0]

    def evaluate(x, t, y, s, k):
        base = np.broadcast_shapes(y.shape[:-1], s.shape[:-1], k.shape[:-1])
        pad = (1,) * len(base)
        s_full = np.empty((q,) + base + (m,))
        if n_kept:
            s_full[..., :n_kept] = np.broadcast_to(s, base + (n_kept,))[None]
        s_full[..., n_kept:] = combos.reshape((q,) + pad + (n_avg,))
        vals = flux(x, t, y[None], s_full, k[None])
        return vals.mean(axis=0)

    return FluxModel(
        evaluate=evaluate,
        c0=flux.c0,
        c1=flux.c1,
        dim=flux.dim,
        n_temporal=n_kept,
        alpha=flux.alpha,
        periodic=False,  # inner flux already wraps its arguments
        descriptor={"kind": "averaged", "kept": n_kept, "of": flux.descriptor},
    )


def solve_averaged_elliptic_cell(
    flux: FluxModel,
    macro: tuple,
    xi,
    s_kept,
    lbar: int,
    grid: PeriodicGrid,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> CellSolution:
    """Elliptic cell solve with the flux averaged over s_{lbar..m}.

    The corrector is independent of the averaged coordinates by
    construction, which realises the extra equations d_{s_i} u1 = 0.
    """
    m = flux.n_temporal
    if not 1 <= lbar <= m:
        raise ValueError(f"lbar must lie in [1, {m}], got {lbar}")
    kept = _as_s_vector(s_kept, lbar - 1, "s_kept")
    avg = averaged_flux(flux, lbar - 1, grid.ns)
    sol = solve_elliptic_cell(avg, macro, xi, kept, grid, tol, max_iter)
    sol.regime = "averaged_elliptic"
    return sol


def solve_averaged_parabolic_cell(
    flux: FluxModel,
    macro: tuple,
    xi,
    s_kept,
    lring: int,
    grid: PeriodicGrid,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    period_tol: float | None = None,
    max_sweeps: int = 200,
) -> CellSolution:
    """Time-periodic solve in s_{lring-1} with the flux averaged over s_{lring..m}."""
    m = flux.n_temporal
    if not 2 <= lring <= m:
        raise ValueError(f"lring must lie in [2, {m}], got {lring}")
    kept = _as_s_vector(s_kept, lring - 2, "s_kept")
    avg = averaged_flux(flux, lring - 1, grid.ns)
    sol = solve_parabolic_cell(
        avg, macro, xi, kept, grid, tol, max_iter, period_tol, max_sweeps
    )
    sol.regime = "averaged_parabolic"
    return sol


def solve_local(
    flux: FluxModel,
    macro: tuple,
    xi,
    regime: RegimeClassification,
    grid: PeriodicGrid,
    s_outer=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> CellSolution:
    """Dispatch to the local problem matching the classified regime.

    ``s_outer`` freezes the temporal coordinates that the solution array
    does not resolve (defaults to zeros): all m for SlowTemporal, the first
    m-1 for SlowResonant, the first lbar-1 for RapidTemporal and the first
    lring-2 for RapidResonant.  The Matches and Between families share the
    same four solver bodies.
    """
    m = flux.n_temporal
    kind = regime.regime
    if kind is RegimeKind.SLOW_TEMPORAL:
        return solve_elliptic_cell(
            flux, macro, xi, _as_s_vector(s_outer, m, "s_outer"), grid, tol, max_iter
        )
    if kind is RegimeKind.SLOW_RESONANT:
        return solve_parabolic_cell(
            flux, macro, xi, _as_s_vector(s_outer, m - 1, "s_outer"), grid, tol, max_iter
        )
    if kind is RegimeKind.RAPID_TEMPORAL:
        if regime.index is None or not 1 <= regime.index <= m:
            raise ValueError(f"RapidTemporal index {regime.index} incompatible with m={m}")
        return solve_averaged_elliptic_cell(
            flux,
            macro,
            xi,
            _as_s_vector(s_outer, regime.index - 1, "s_outer"),
            regime.index,
            grid,
            tol,
            max_iter,
        )
    if kind is RegimeKind.RAPID_RESONANT:
        if regime.index is None or not 2 <= regime.index <= m:
            raise ValueError(f"RapidResonant index {regime.index} incompatible with m={m}")
        return solve_averaged_parabolic_cell(
            flux,
            macro,
            xi,
            _as_s_vector(s_outer, regime.index - 2, "s_outer"),
            regime.index,
            grid,
            tol,
            max_iter,
        )
    raise ValueError(f"unknown regime kind {kind}")


def save_cell_solution(sol: CellSolution, stem: str) -> tuple[str, str]:
    """Write a portable JSON header plus a row-major CSV value table."""
    header = {
        "grid": sol.grid.to_json(),
        "regime": sol.regime,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "mean": sol.mean,
        "layout": "row-major; axis 0 is the temporal node for time-periodic solves",
        "shape": list(sol.values.shape),
    }
    json_path = f"{stem}.json"
    csv_path = f"{stem}.csv"
    with open(json_path, "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    table = sol.values.reshape(sol.values.shape[0], -1) if sol.values.ndim > 1 else sol.values[None]
    np.savetxt(csv_path, table, delimiter=",", fmt="%.17g")
    return json_path, csv_path
