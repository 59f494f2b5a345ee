"""Causal space-time mollification of a stored trajectory.

The kernel is ``eta_theta(y, tau) = theta^-(d+1) eta(y / theta, tau / theta)``
with the separable bump ``eta(x, s) = a(s) b(|x|)``: ``a`` lives on ``(1, 2)``
and ``b`` on the unit ball, so ``|x|^2 < 1 < s`` on the support. The value at
time ``t`` therefore only sees inputs at times in ``(t - 2 theta, t - theta)``;
for ``theta < 1`` this is strictly earlier than ``t - theta^2``. Fields are
extended by zero before the first stored time when that time is 0.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .errors import ConfigurationError, InvalidInputError
from .grid import SpectralGrid


def _psi(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def time_bump(s):
    """Smooth bump supported on ``(1, 2)``, unnormalised."""
    s = np.asarray(s, dtype=float)
    return _psi(s - 1.0) * _psi(2.0 - s)


def space_bump(rho):
    """Smooth radial bump supported on ``rho < 1``, unnormalised."""
    rho = np.asarray(rho, dtype=float)
    return _psi(1.0 - rho**2)


@lru_cache(maxsize=None)
def _time_mass():
    return quad(lambda s: float(time_bump(np.array(s))), 1.0, 2.0, epsabs=0, epsrel=1e-13)[0]


def spatial_kernel_hat(grid: SpectralGrid, theta):
    """Fourier multiplier of the normalised spatial kernel (discrete mass 1)."""
    r2 = np.zeros(grid.shape)
    for x in grid.coords:
        dx = np.minimum(x, 2 * np.pi - x)     # periodic distance to the origin
        r2 = r2 + dx * dx
    K = space_bump(np.sqrt(r2) / theta)
    K /= K.sum()
    return grid.fft(K)


def time_weights(times, theta, eval_t):
    """Trapezoid weights of the temporal kernel on the stored times.

    Entries whose kernel value vanishes are exactly zero.
    """
    times = np.asarray(times, dtype=float)
    m = len(times)
    width = np.empty(m)
    if m == 1:
        width[:] = 0.0
    else:
        gaps = np.diff(times)
        width[0] = 0.5 * gaps[0]
        width[-1] = 0.5 * gaps[-1]
        width[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    kern = time_bump((eval_t - times) / theta) / (theta * _time_mass())
    return np.where(kern > 0, kern * width, 0.0)


def _check_window(times, theta, eval_t):
    lo, hi = eval_t - 2 * theta, eval_t - theta
    if hi <= 0:
        return                              # window lies in the zero extension
    start = max(lo, 0.0)
    if times[0] > start or times[-1] < hi:
        raise ConfigurationError(
            f"history covers [{times[0]:.6g}, {times[-1]:.6g}] but the mollifier at "
            f"t = {eval_t:.6g} with theta = {theta:.6g} needs [{start:.6g}, {hi:.6g}]")
    inside = times[(times >= start) & (times <= hi)]
    if len(inside) < 2:
        raise ConfigurationError("fewer than two stored times inside the mollifier window")
    spacing = np.diff(inside).max()
    if theta**2 < 2 * spacing * (1 - 1e-9):
        raise ConfigurationError(
            f"theta^2 = {theta**2:.3g} is below twice the history spacing {spacing:.3g}")


def retarded_mollify(history, theta, eval_t):
    """Mollified ``(u, q)`` at ``eval_t`` from a sequence of ``(t, u, q)`` snapshots.

    Parameters
    ----------
    history : sequence
        Objects with attributes ``t``, ``u`` (``(d, n, ..)``) and ``q``
        (``(5, n, ..)``), times strictly increasing.
    theta : float
        Kernel scale, ``0 < theta < 1``.
    eval_t : float
        Evaluation time.

    Returns
    -------
    (u, q) : tuple of ndarray
        Divergence-free ``u`` whenever every input ``u`` is.
    """
    theta = float(theta)
    if not 0 < theta < 1:
        raise InvalidInputError(f"theta must lie in (0, 1), got {theta}")
    hist = list(history)
    if len(hist) < 2:
        raise ConfigurationError("retarded mollifier needs at least two snapshots")
    times = np.array([h.t for h in hist], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ConfigurationError("history timestamps must be strictly increasing")
    _check_window(times, theta, float(eval_t))
    u0 = np.asarray(hist[0].u)
    grid = SpectralGrid(u0.shape[0], u0.shape[-1])
    w = time_weights(times, theta, float(eval_t))
    u = np.zeros(u0.shape)
    q = np.zeros(np.shape(hist[0].q))
    for wj, h in zip(w, hist):
        if wj > 0:
            u += wj * h.u
            q += wj * h.q
    Kh = spatial_kernel_hat(grid, theta)
    return grid.ifft(grid.fft(u) * Kh), grid.ifft(grid.fft(q) * Kh)
