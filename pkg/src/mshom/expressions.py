"""Trigonometric-polynomial expressions for coefficients and test functions.

Configs describe every spatially or temporally varying function through one
small grammar so that runs are portable and bit-exactly reproducible:

    expr   := const + sum of terms
    term   := c * factor * factor * ...
    factor := sin(2*pi*arg) | cos(2*pi*arg)
    arg    := cx.x + ct*t + n.y + l.s        (dot products over components)

``n`` and ``l`` (the cell frequencies in y and s) must be integers so every
factor is 1-periodic in the cell variables; the macroscopic coefficients
``cx`` and ``ct`` may be arbitrary rationals or floats.  JSON form:

    {"const": 2.0,
     "terms": [{"c": 1.0,
                "factors": [{"fn": "sin", "y": [1]}]}]}

A bare number is accepted as a constant expression.  Missing coefficient
fields default to zero.  Evaluation broadcasts over numpy arrays supplied per
variable group.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError

__all__ = ["Factor", "Term", "Expression", "as_expression"]

_TWO_PI = 2.0 * np.pi


def _coeff_list(raw) -> tuple[float, ...]:
    if raw is None:
        return ()
    if isinstance(raw, (int, float, str, Fraction)):
        raw = [raw]
    out = []
    for v in raw:
        if isinstance(v, str):
            v = Fraction(v)
        out.append(float(v))
    return tuple(out)


def _int_coeff_list(raw, name: str) -> tuple[int, ...]:
    values = _coeff_list(raw)
    ints = []
    for v in values:
        if v != int(v):
            raise ConfigError(f"{name} frequencies must be integers for periodicity, got {v}")
        ints.append(int(v))
    return tuple(ints)


@dataclass(frozen=True)
class Factor:
    """One factor sin/cos(2*pi*(cx.x + ct*t + n.y + l.s))."""

    fn: str
    x: tuple[float, ...] = ()
    t: float = 0.0
    y: tuple[int, ...] = ()
    s: tuple[int, ...] = ()

    def __post_init__(self):
        if self.fn not in ("sin", "cos"):
            raise ConfigError(f"factor function must be 'sin' or 'cos', got {self.fn!r}")

    @classmethod
    def parse(cls, spec: dict) -> "Factor":
        known = {"fn", "x", "t", "y", "s"}
        unknown = set(spec) - known
        if unknown:
            raise ConfigError(f"unknown factor fields {sorted(unknown)}")
        t_raw = spec.get("t", 0)
        if isinstance(t_raw, str):
            t_raw = Fraction(t_raw)
        return cls(
            fn=spec.get("fn", "cos"),
            x=_coeff_list(spec.get("x")),
            t=float(t_raw),
            y=_int_coeff_list(spec.get("y"), "y"),
            s=_int_coeff_list(spec.get("s"), "s"),
        )

    def to_json(self) -> dict:
        out = {"fn": self.fn}
        if self.x:
            out["x"] = list(self.x)
        if self.t:
            out["t"] = self.t
        if self.y:
            out["y"] = list(self.y)
        if self.s:
            out["s"] = list(self.s)
        return out

    def _argument(self, x, t, y, s):
        arg = 0.0
        for c, comp in zip(self.x, _components(x, len(self.x), "x")):
            if c:
                arg = arg + c * comp
        if self.t:
            if t is None:
                raise ConfigError("expression references t but no t was supplied")
            arg = arg + self.t * t
        for c, comp in zip(self.y, _components(y, len(self.y), "y")):
            if c:
                arg = arg + c * comp
        for c, comp in zip(self.s, _components(s, len(self.s), "s")):
            if c:
                arg = arg + c * comp
        return arg

    def evaluate(self, x, t, y, s):
        arg = self._argument(x, t, y, s)
        func = np.sin if self.fn == "sin" else np.cos
        return func(_TWO_PI * np.asarray(arg, dtype=float))


def _components(group, needed: int, name: str):
    """Yield the first ``needed`` components of a variable group."""
    if needed == 0:
        return ()
    if group is None:
        raise ConfigError(f"expression references {name} but no {name} was supplied")
    if isinstance(group, (tuple, list)):
        comps = group
    else:
        arr = np.asarray(group, dtype=float)
        comps = (arr,) if arr.ndim == 0 else tuple(np.moveaxis(arr, -1, 0)) if arr.ndim > 1 else (arr,)
    if len(comps) < needed:
        raise ConfigError(f"expression needs {needed} {name}-components, got {len(comps)}")
    return comps[:needed]


@dataclass(frozen=True)
class Term:
    c: float
    factors: tuple[Factor, ...] = ()

    @classmethod
    def parse(cls, spec: dict) -> "Term":
        c = spec.get("c", 1.0)
        if isinstance(c, str):
            c = float(Fraction(c))
        factors = tuple(Factor.parse(f) for f in spec.get("factors", []))
        return cls(float(c), factors)

    def to_json(self) -> dict:
        return {"c": self.c, "factors": [f.to_json() for f in self.factors]}

    def evaluate(self, x, t, y, s):
        value = self.c
        for factor in self.factors:
            value = value * factor.evaluate(x, t, y, s)
        return value


@dataclass(frozen=True)
class Expression:
    """Sum of a constant and trigonometric product terms."""

    const: float = 0.0
    terms: tuple[Term, ...] = ()

    @classmethod
    def parse(cls, spec) -> "Expression":
        if isinstance(spec, Expression):
            return spec
        if isinstance(spec, (int, float)):
            return cls(const=float(spec))
        if isinstance(spec, str):
            return cls(const=float(Fraction(spec)))
        if isinstance(spec, dict):
            known = {"const", "terms"}
            unknown = set(spec) - known
            if unknown:
                raise ConfigError(f"unknown expression fields {sorted(unknown)}")
            const = spec.get("const", 0.0)
            if isinstance(const, str):
                const = float(Fraction(const))
            terms = tuple(Term.parse(t) for t in spec.get("terms", []))
            return cls(float(const), terms)
        raise ConfigError(f"cannot parse expression {spec!r}")

    def to_json(self) -> dict:
        return {"const": self.const, "terms": [t.to_json() for t in self.terms]}

    def __call__(self, x=None, t=None, y=None, s=None):
        """Evaluate with numpy broadcasting over the supplied variable groups.

        Variable groups are scalars, arrays, or tuples of per-component
        arrays; an array whose last axis matches the needed component count
        is split along that axis.
        """
        value = np.asarray(self.const, dtype=float)
        for term in self.terms:
            value = value + term.evaluate(x, t, y, s)
        return value

    # -- bounds and cell statistics ------------------------------------

    def bounds(self) -> tuple[float, float]:
        """Interval bounds: const +- sum |c| (each trig factor bounded by 1).

        Conservative for multi-term expressions, exact for a constant plus a
        single oscillatory term.
        """
        radius = sum(abs(term.c) for term in self.terms)
        return self.const - radius, self.const + radius

    def depends_on_cell(self) -> bool:
        return any(f.y or f.s for term in self.terms for f in term.factors)

    def max_cell_frequency(self) -> int:
        worst = 0
        for term in self.terms:
            total = sum(
                sum(abs(c) for c in f.y) + sum(abs(c) for c in f.s)
                for f in term.factors
            )
            worst = max(worst, total)
        return worst

    def cell_mean(self, x=None, t=None, n_y: int = 0, n_s: int = 0):
        """Average over the unit cell in the (y, s) variables.

        Uses a uniform tensor grid with more than twice the maximal combined
        integer frequency per axis, which integrates trigonometric
        polynomials of that degree exactly; the result is the analytic cell
        mean up to rounding.
        """
        npts = max(4, 2 * self.max_cell_frequency() + 3)
        grid = (np.arange(npts) + 0.5) / npts
        n_axes = n_y + n_s
        if n_axes == 0:
            return self(x=x, t=t)
        mesh = np.meshgrid(*([grid] * n_axes), indexing="ij")
        y = tuple(mesh[:n_y])
        s = tuple(mesh[n_y:])
        pad = (1,) * n_axes
        x_b = None
        if x is not None:
            x_b = tuple(
                np.asarray(c, dtype=float).reshape(np.shape(c) + pad) for c in _as_tuple(x)
            )
        t_b = None
        if t is not None:
            t_arr = np.asarray(t, dtype=float)
            t_b = t_arr.reshape(t_arr.shape + pad)
        values = self(x=x_b, t=t_b, y=y, s=s)
        return np.mean(values, axis=tuple(range(-n_axes, 0)))


def _as_tuple(group):
    if isinstance(group, (tuple, list)):
        return tuple(group)
    return (group,)


def as_expression(spec) -> Expression:
    """Parse arbitrary config input (number, string, dict) into an Expression."""
    return Expression.parse(spec)
