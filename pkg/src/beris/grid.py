"""Periodic spectral grid on the torus ``[0, 2 pi)^d`` (d = 2 or 3).

Fields are stored component-first: a scalar field has shape ``(n,)*d``, a
velocity field ``(d, n, ..., n)`` and a Q-tensor field ``(5, n, ..., n)`` in
the coefficient basis of :mod:`beris.tensor`.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.fft as sfft

from . import tensor
from .errors import InvalidInputError

_WORKERS = 1


def set_threads(n):
    """Number of worker threads used by the FFTs."""
    global _WORKERS
    _WORKERS = max(1, int(n))


def fft_friendly(n) -> bool:
    """Even ``n >= 8`` whose only prime factors are 2, 3 and 5."""
    if int(n) != n or n < 8 or n % 2:
        return False
    m = int(n)
    for p in (2, 3, 5):
        while m % p == 0:
            m //= p
    return m == 1


class SpectralGrid:
    """Uniform grid with integer wavenumbers and a 2/3-rule dealias mask."""

    def __init__(self, dim: int, n: int):
        if dim not in (2, 3):
            raise InvalidInputError(f"dim must be 2 or 3, got {dim}")
        if not fft_friendly(n):
            raise InvalidInputError(f"n must be even, >= 8 and 5-smooth, got {n}")
        self.dim, self.n = int(dim), int(n)
        self.h = 2 * np.pi / n
        self.cell = self.h**dim
        self.shape = (n,) * dim
        self.axes = tuple(range(-dim, 0))
        kfull = np.fft.fftfreq(n, 1.0 / n)
        khalf = np.fft.rfftfreq(n, 1.0 / n)
        ks = []
        for i in range(dim):
            k1 = khalf if i == dim - 1 else kfull
            sh = [1] * dim
            sh[i] = len(k1)
            ks.append(k1.reshape(sh))
        self.k = [np.broadcast_to(k, self.spec_shape).copy() for k in ks]
        self.k2 = sum(k * k for k in self.k)
        self.k2_safe = np.where(self.k2 == 0, 1.0, self.k2)
        cut = n / 3.0
        self.mask = np.ones(self.spec_shape, dtype=bool)
        for k in self.k:
            self.mask &= np.abs(k) <= cut
        # Nyquist plane is never retained: n/2 > n/3
        self.nyquist = np.zeros(self.spec_shape, dtype=bool)
        for k in self.k:
            self.nyquist |= np.abs(k) == n // 2

    @property
    def spec_shape(self):
        return (self.n,) * (self.dim - 1) + (self.n // 2 + 1,)

    def __eq__(self, other):
        return isinstance(other, SpectralGrid) and (self.dim, self.n) == (other.dim, other.n)

    def __hash__(self):
        return hash((self.dim, self.n))

    def __repr__(self):
        return f"SpectralGrid(dim={self.dim}, n={self.n})"

    @cached_property
    def coords(self):
        """Tuple of coordinate arrays, each of shape ``(n,)*d``."""
        x = np.arange(self.n) * self.h
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    # transforms ---------------------------------------------------------
    def fft(self, f):
        return sfft.rfftn(f, axes=self.axes, workers=_WORKERS)

    def ifft(self, fh):
        return sfft.irfftn(fh, s=self.shape, axes=self.axes, workers=_WORKERS)

    def dealias(self, fh):
        return fh * self.mask

    def filt(self, f):
        """Project a physical-space field onto the retained modes."""
        return self.ifft(self.dealias(self.fft(f)))

    # spectral calculus on coefficient arrays --------------------------------
    def grad_hat(self, fh):
        """``(d, ...)`` gradient of spectral field(s); new leading axis is the derivative."""
        return np.stack([1j * k * fh for k in self.k])

    def lap_hat(self, fh):
        return -self.k2 * fh

    def div_hat(self, vh):
        return sum(1j * self.k[i] * vh[i] for i in range(self.dim))

    def integrate(self, f):
        """Uniform-weight quadrature over the trailing ``d`` axes."""
        return np.sum(f, axis=self.axes) * self.cell

    def leray_hat(self, vh):
        kv = sum(self.k[i] * vh[i] for i in range(self.dim)) / self.k2_safe
        out = np.stack([vh[i] - self.k[i] * kv for i in range(self.dim)])
        # the sign of k at Nyquist is ambiguous, so those modes are dropped
        out[:, self.nyquist] = 0
        return out

    def max_abs_divergence_ratio(self, u):
        """``max |k.u_hat| / max |u_hat|`` over retained modes."""
        uh = self.fft(u)
        kv = np.abs(sum(self.k[i] * uh[i] for i in range(self.dim)))[self.mask]
        scale = np.abs(uh).max()
        return float(kv.max() / scale) if scale > 0 else 0.0


def leray_project(u, grid: SpectralGrid):
    """Divergence-free part of a velocity field (mode 0 untouched, Nyquist modes removed)."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("velocity field has non-finite entries")
    return grid.ifft(grid.leray_hat(grid.fft(u)))


def qmat(q):
    """Coefficient field ``(5, ...)`` to matrix field ``(..., 3, 3)``."""
    return np.einsum("a...,aij->...ij", q, tensor.BASIS)


def qcoef(Qm):
    """Matrix field ``(..., 3, 3)`` to coefficient field ``(5, ...)``."""
    return np.einsum("...ij,aij->a...", Qm, tensor.BASIS)
