"""Microscopic flux models and sampled verification of their structure.

A flux is a map a(x, t, y, s, k) -> R^N that is zero at k = 0, 1-periodic in
the cell variables y and s, strongly monotone in k with constant c0 and
Hoelder-growth bounded with constant c1 and exponent alpha.  Models carry
their *claimed* constants; `verify_structure` checks the claims on seeded
random samples (a pass is evidence, not proof) and additionally reports
fitted constants as a diagnostic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .expressions import Expression, as_expression

logger = logging.getLogger(__name__)

__all__ = [
    "FluxModel",
    "SamplerSpec",
    "ConditionResult",
    "StructureReport",
    "linear_periodic",
    "perturbed_monotone",
    "flux_from_config",
    "verify_structure",
]


@dataclass
class FluxModel:
    """A flux a(x, t, y, s; k) with claimed structure constants.

    ``evaluate`` receives arrays with trailing component axes: y of shape
    (..., N), s of shape (..., m), k of shape (..., N); x is either None, a
    length-N vector or an (..., N) array, and t a scalar or array.  It must
    return shape (..., N) and be deterministic.  The wrapper applies the
    periodic extension to y and s before delegating, so evaluate may assume
    cell variables in [0, 1).
    """

    evaluate: Callable[..., np.ndarray]
    c0: float
    c1: float
    dim: int
    n_temporal: int
    alpha: float = 1.0
    periodic: bool = True
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.c0 <= 0 or self.c1 <= 0:
            raise ConfigError("flux constants c0 and c1 must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("flux Hoelder exponent alpha must lie in (0, 1]")
        if self.dim not in (1, 2):
            raise ConfigError("flux spatial dimension must be 1 or 2")
        # n_temporal == 0 occurs only for internally averaged fluxes.
        if self.n_temporal < 0:
            raise ConfigError("flux temporal argument count must be nonnegative")

    def __call__(self, x, t, y, s, k) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        s = np.asarray(s, dtype=float)
        k = np.asarray(k, dtype=float)
        if y.shape[-1] != self.dim:
            raise ValueError(f"y must have {self.dim} components, got shape {y.shape}")
        if k.shape[-1] != self.dim:
            raise ValueError(f"k must have {self.dim} components, got shape {k.shape}")
        if s.shape[-1] != self.n_temporal:
            raise ValueError(
                f"s must have {self.n_temporal} components, got shape {s.shape}"
            )
        if self.periodic:
            y = np.mod(y, 1.0)
            s = np.mod(s, 1.0)
        out = np.asarray(self.evaluate(x, t, y, s, k), dtype=float)
        want = np.broadcast_shapes(y.shape[:-1], s.shape[:-1], k.shape[:-1]) + (self.dim,)
        if out.shape != want:
            out = np.broadcast_to(out, want)
        return out

    @property
    def damping(self) -> float:
        """Fixed damping c0/c1**2 of the preconditioned monotone iteration."""
        return self.c0 / self.c1**2


def _split_cell(y: np.ndarray, s: np.ndarray):
    y_comps = tuple(np.moveaxis(y, -1, 0))
    s_comps = tuple(np.moveaxis(s, -1, 0))
    return y_comps, s_comps


def linear_periodic(
    coefficient,
    dim: int = 1,
    n_temporal: int = 1,
    c0: float | None = None,
    c1: float | None = None,
) -> FluxModel:
    """Isotropic linear flux a = A(y, s) * k with scalar coefficient A.

    Default constants come from interval bounds of the coefficient
    expression: c0 = lower bound (must be positive), c1 = upper bound.  These
    are exact for a constant plus one oscillatory term and conservative
    otherwise; pass explicit constants to sharpen them.
    """
    A = as_expression(coefficient)
    lo, hi = A.bounds()
    if c0 is None:
        c0 = lo
    if c1 is None:
        c1 = hi
    if lo <= 0:
        logger.warning("coefficient lower bound %g is not positive; claims may fail", lo)

    def evaluate(x, t, y, s, k):
        y_comps, s_comps = _split_cell(y, s)
        a_val = A(x=x, t=t, y=y_comps, s=s_comps)
        return np.asarray(a_val)[..., None] * k

    return FluxModel(
        evaluate=evaluate,
        c0=float(c0),
        c1=float(c1),
        dim=dim,
        n_temporal=n_temporal,
        alpha=1.0,
        descriptor={"kind": "linear", "A": A.to_json()},
    )


def perturbed_monotone(
    coefficient,
    bump,
    delta: float,
    dim: int = 1,
    n_temporal: int = 1,
    c0: float | None = None,
    c1: float | None = None,
) -> FluxModel:
    """Nonlinear monotone flux a = A(y,s)*k + delta*beta(y,s)*k/(1+|k|).

    The perturbation k/(1+|k|) is the gradient of a convex function, hence
    monotone, globally Lipschitz with constant 1 and bounded; it keeps
    alpha = 1 while exercising genuine nonlinearity.  Monotonicity constant
    stays c0 = min A; the growth constant gains delta*max(beta).
    """
    if delta < 0:
        raise ConfigError("perturbation strength delta must be nonnegative")
    A = as_expression(coefficient)
    beta = as_expression(bump)
    a_lo, a_hi = A.bounds()
    b_lo, b_hi = beta.bounds()
    if b_lo < 0:
        raise ConfigError("perturbation weight beta must be nonnegative on the cell")
    if c0 is None:
        c0 = a_lo
    if c1 is None:
        c1 = a_hi + delta * b_hi

    def evaluate(x, t, y, s, k):
        y_comps, s_comps = _split_cell(y, s)
        a_val = np.asarray(A(x=x, t=t, y=y_comps, s=s_comps))[..., None]
        b_val = np.asarray(beta(x=x, t=t, y=y_comps, s=s_comps))[..., None]
        norm = np.linalg.norm(k, axis=-1, keepdims=True)
        return a_val * k + delta * b_val * k / (1.0 + norm)

    return FluxModel(
        evaluate=evaluate,
        c0=float(c0),
        c1=float(c1),
        dim=dim,
        n_temporal=n_temporal,
        alpha=1.0,
        descriptor={
            "kind": "perturbed",
            "A": A.to_json(),
            "beta": beta.to_json(),
            "delta": float(delta),
        },
    )


def flux_from_config(spec: dict, dim: int, n_temporal: int) -> FluxModel:
    """Build a flux from its config descriptor {"kind": ..., ...}."""
    kind = spec.get("kind")
    common = dict(
        dim=dim,
        n_temporal=n_temporal,
        c0=spec.get("c0"),
        c1=spec.get("c1"),
    )
    if kind == "linear":
        return linear_periodic(spec["A"], **common)
    if kind == "perturbed":
        return perturbed_monotone(
            spec["A"], spec.get("beta", 1.0), float(spec.get("delta", 0.0)), **common
        )
    raise ConfigError(f"unknown flux kind {kind!r}")


# ---------------------------------------------------------------------------
# Sampled structure verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerSpec:
    """Pseudo-random tuple sampler: count tuples, fixed seed, |k| <= k_radius."""

    count: int = 1000
    seed: int = 0
    k_radius: float = 4.0

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("sampler count must be at least 1")
        if self.k_radius <= 0:
            raise ConfigError("sampler k_radius must be positive")


@dataclass
class ConditionResult:
    name: str
    passed: bool
    worst_margin: float
    worst_tuple: dict | None = None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "worst_margin": float(self.worst_margin),
            "worst_tuple": self.worst_tuple,
        }


@dataclass
class StructureReport:
    conditions: dict
    diagnostics: dict

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def to_json(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "conditions": {k: v.to_json() for k, v in self.conditions.items()},
            "diagnostics": self.diagnostics,
        }


def _sample_ball(rng: np.random.Generator, count: int, dim: int, radius: float) -> np.ndarray:
    direction = rng.standard_normal((count, dim))
    direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
    r = radius * rng.random(count) ** (1.0 / dim)
    return direction * r[:, None]


def _worst(tuples: dict, idx: int) -> dict:
    return {key: np.asarray(arr)[idx].tolist() for key, arr in tuples.items()}


def verify_structure(flux: FluxModel, sampler: SamplerSpec | None = None, tol: float = 1e-9) -> StructureReport:
    """Check the flux's claimed structure conditions on random tuples.

    Draws ``sampler.count`` tuples (x, t, y, s, k, k'), then checks

    * zero at zero:   a(..., 0) = 0,
    * periodicity:    unit shifts of y and s leave values unchanged,
    * monotonicity:   (a(k) - a(k')).(k - k') >= c0*(1 - tol)*|k - k'|^2,
    * growth:         |a(k) - a(k')| <= c1*(1 + tol)*(1+|k|+|k'|)^(1-alpha)*|k-k'|^alpha,

    with ``tol`` entering as relative slack on the claimed constants to
    absorb rounding.  Failures become report entries, never exceptions; the
    worst violating tuple is recorded per condition.  Deterministic given the
    sampler seed.  Fitted constants (sharpest c0/c1 seen) are reported as
    diagnostics but not asserted.
    """
    sampler = sampler or SamplerSpec()
    if tol <= 0:
        raise ConfigError("tolerance must be positive")
    rng = np.random.default_rng(sampler.seed)
    n = sampler.count
    dim, m = flux.dim, flux.n_temporal

    x = rng.random((n, dim))
    t = rng.random(n)
    y = rng.random((n, dim))
    s = rng.random((n, m))
    k = _sample_ball(rng, n, dim, sampler.k_radius)
    kp = _sample_ball(rng, n, dim, sampler.k_radius)
    tuples = {"x": x, "t": t, "y": y, "s": s, "k": k, "kp": kp}

    conditions: dict[str, ConditionResult] = {}

    # Zero at zero.
    a0 = flux(x, t, y, s, np.zeros_like(k))
    z = np.linalg.norm(a0, axis=-1)
    idx = int(np.argmax(z))
    conditions["zero_at_zero"] = ConditionResult(
        "zero_at_zero", bool(z[idx] <= tol), float(z[idx]), _worst(tuples, idx)
    )

    # Periodicity under unit shifts of every cell coordinate.
    ak = flux(x, t, y, s, k)
    worst_shift = 0.0
    worst_idx = 0
    for axis in range(dim):
        shift = np.zeros(dim)
        shift[axis] = 1.0
        diff = np.linalg.norm(flux(x, t, y + shift, s, k) - ak, axis=-1)
        i = int(np.argmax(diff))
        if diff[i] > worst_shift:
            worst_shift, worst_idx = float(diff[i]), i
    for axis in range(m):
        shift = np.zeros(m)
        shift[axis] = 1.0
        diff = np.linalg.norm(flux(x, t, y, s + shift, k) - ak, axis=-1)
        i = int(np.argmax(diff))
        if diff[i] > worst_shift:
            worst_shift, worst_idx = float(diff[i]), i
    scale = 1.0 + float(np.max(np.linalg.norm(ak, axis=-1)))
    conditions["periodicity"] = ConditionResult(
        "periodicity", worst_shift <= tol * scale, worst_shift, _worst(tuples, worst_idx)
    )

    # Monotonicity with the claimed c0 (relative slack tol).
    akp = flux(x, t, y, s, kp)
    dk = k - kp
    dk_sq = np.einsum("ij,ij->i", dk, dk)
    pairing = np.einsum("ij,ij->i", ak - akp, dk)
    margin = pairing - flux.c0 * (1.0 - tol) * dk_sq
    idx = int(np.argmin(margin))
    conditions["monotonicity"] = ConditionResult(
        "monotonicity", bool(margin[idx] >= -tol), float(margin[idx]), _worst(tuples, idx)
    )

    # Hoelder growth with the claimed c1 and alpha (relative slack tol).
    norms = np.linalg.norm(ak - akp, axis=-1)
    base = (1.0 + np.linalg.norm(k, axis=-1) + np.linalg.norm(kp, axis=-1)) ** (1.0 - flux.alpha)
    bound = flux.c1 * (1.0 + tol) * base * np.linalg.norm(dk, axis=-1) ** flux.alpha
    margin = bound - norms
    idx = int(np.argmin(margin))
    conditions["growth"] = ConditionResult(
        "growth", bool(margin[idx] >= -tol), float(margin[idx]), _worst(tuples, idx)
    )

    # Derived bound |a(k)| <= c1*(1+|k|), a consequence of the two above.
    lin = np.linalg.norm(ak, axis=-1) - flux.c1 * (1.0 + tol) * (1.0 + np.linalg.norm(k, axis=-1))
    idx = int(np.argmax(lin))
    conditions["linear_growth"] = ConditionResult(
        "linear_growth", bool(lin[idx] <= tol), float(-lin[idx]), _worst(tuples, idx)
    )

    nonzero = dk_sq > 0
    diagnostics = {
        "count": n,
        "seed": sampler.seed,
        "k_radius": sampler.k_radius,
        "fitted_c0": float(np.min(pairing[nonzero] / dk_sq[nonzero])) if nonzero.any() else None,
        "fitted_c1": float(
            np.max(norms[nonzero] / (base[nonzero] * np.linalg.norm(dk, axis=-1)[nonzero] ** flux.alpha))
        )
        if nonzero.any()
        else None,
        "claimed_c0": flux.c0,
        "claimed_c1": flux.c1,
        "alpha": flux.alpha,
    }
    report = StructureReport(conditions=conditions, diagnostics=diagnostics)
    if not report.all_passed:
        failed = [name for name, c in conditions.items() if not c.passed]
        logger.info("structure verification failed conditions: %s", failed)
    return report
