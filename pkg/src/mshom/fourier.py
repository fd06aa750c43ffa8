"""Fast inverse Laplacians used as preconditioners.

Both operators invert ``shift*I - Lap_h`` for the standard second-order
finite-difference Laplacian on a uniform grid:

* `PeriodicLaplacian` on the unit torus grid (FFT diagonalisation); with
  shift = 0 it acts on the mean-zero subspace and annihilates the mean.
* `DirichletLaplacian` on the interior nodes of the unit box with
  homogeneous Dirichlet boundary (DST-I diagonalisation).

These are exact solves of the discrete systems, so the surrounding monotone
iteration inherits a grid-independent contraction rate.
"""

from __future__ import annotations

import numpy as np
import scipy.fft

__all__ = ["PeriodicLaplacian", "DirichletLaplacian"]


class PeriodicLaplacian:
    """Inverse of shift*I - Lap_h on the periodic grid of n points per axis."""

    def __init__(self, dim: int, n: int, shift: float = 0.0):
        if dim < 1 or n < 2:
            raise ValueError("need dim >= 1 and n >= 2")
        self.dim = dim
        self.n = n
        self.shift = float(shift)
        h = 1.0 / n
        modes = np.arange(n)
        eig1d = (2.0 - 2.0 * np.cos(2.0 * np.pi * modes / n)) / h**2
        symbol = np.zeros((n,) * dim)
        for axis in range(dim):
            shape = [1] * dim
            shape[axis] = n
            symbol = symbol + eig1d.reshape(shape)
        symbol = symbol + self.shift
        inv = np.zeros_like(symbol)
        nonzero = symbol != 0.0
        inv[nonzero] = 1.0 / symbol[nonzero]
        # shift == 0: zero mode removed, i.e. solve on mean-zero functions.
        self._inv_symbol = inv

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs_hat = scipy.fft.fftn(rhs)
        return scipy.fft.ifftn(rhs_hat * self._inv_symbol).real


class DirichletLaplacian:
    """Inverse of shift*I - Lap_h on the interior of the unit box.

    The grid has n subintervals per axis (spacing h = 1/n); unknowns live on
    the (n-1)**dim interior nodes and the boundary value is zero.  DST-I with
    orthonormal scaling is an involution, so solve() is two transforms and a
    diagonal scaling.
    """

    def __init__(self, dim: int, n: int, shift: float = 0.0):
        if dim < 1 or n < 2:
            raise ValueError("need dim >= 1 and n >= 2")
        self.dim = dim
        self.n = n
        self.shift = float(shift)
        h = 1.0 / n
        modes = np.arange(1, n)
        eig1d = (2.0 - 2.0 * np.cos(np.pi * modes / n)) / h**2
        symbol = np.zeros((n - 1,) * dim)
        for axis in range(dim):
            shape = [1] * dim
            shape[axis] = n - 1
            symbol = symbol + eig1d.reshape(shape)
        self._inv_symbol = 1.0 / (symbol + self.shift)
        self._axes = tuple(range(dim))

    def _dst(self, arr: np.ndarray) -> np.ndarray:
        return scipy.fft.dstn(arr, type=1, norm="ortho", axes=self._axes)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._dst(self._dst(rhs) * self._inv_symbol)

    def dual_norm(self, rhs: np.ndarray, h_weight: float) -> float:
        """Discrete H^-1 norm sqrt(<inv_lap rhs, rhs>) with L2 weight h^dim."""
        z = self.solve(rhs)
        return float(np.sqrt(max(h_weight * np.sum(z * rhs), 0.0)))
