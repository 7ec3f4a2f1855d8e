"""Generator of the near-identity change of variables and its time-one flow.

Each bond term of the generator is built from the Fourier coefficients of the
bond potential along the phase difference theta = psi_j - psi_n, computed with
an M-point trapezoid rule (an FFT). The antiderivative of the mean-free part is
pinned to zero at theta = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .action_angle import to_action_angle
from .model import ModelSpec


class ResonantBondError(ValueError):
    """A bond carries equal spins, so its frequency difference vanishes."""


class FlowDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowParams:
    """RK4 settings for the time-one map.

    With ``tolerance`` set the substep count is doubled (at most
    ``max_doublings`` times) until two successive maps agree to it.
    """

    substeps: int = 16
    tolerance: float | None = None
    max_doublings: int = 4
    fd_step: float = 1e-6
    points: int = 256
    gradient: str = "auto"

    def __post_init__(self):
        if self.substeps < 8:
            raise ValueError("the time-one map needs at least 8 substeps")
        if self.points < 8 or self.points % 2:
            raise ValueError("theta quadrature needs an even number (>= 8) of points")
        if self.gradient not in {"auto", "analytic", "fd"}:
            raise ValueError(f"unknown gradient mode {self.gradient!r}")


def active_pairs(spec: ModelSpec) -> np.ndarray:
    """Ordered bonds entering the generator: both ends outside the defect closure."""
    b = spec.lattice.active_bonds()
    if len(b) == 0:
        return b.reshape(0, 2)
    pairs = np.concatenate([b, b[:, ::-1]], axis=0)
    s = spec.signs
    if np.any(s[pairs[:, 0]] == s[pairs[:, 1]]):
        bad = pairs[s[pairs[:, 0]] == s[pairs[:, 1]]][0]
        raise ResonantBondError(f"bond {tuple(bad)} has equal spin signs")
    return pairs


def _bond_arguments(u, spec: ModelSpec, pairs: np.ndarray):
    aa = to_action_angle(u)
    J, psi = aa.actions, aa.angles
    Jj, Jn = J[..., pairs[:, 0]], J[..., pairs[:, 1]]
    theta = psi[..., pairs[:, 0]] - psi[..., pairs[:, 1]]
    fj = spec.signs[pairs[:, 0]] * spec.frequency.f(2.0 * Jj)
    fn = spec.signs[pairs[:, 1]] * spec.frequency.f(2.0 * Jn)
    return Jj, Jn, theta, fj - fn


def bond_potential(Jj, Jn, theta, spec: ModelSpec):
    """G(J_j, J_n, theta) = G(|sqrt(2 J_j) e^{i theta} - sqrt(2 J_n)|^2)."""
    x = 2.0 * Jj + 2.0 * Jn - 4.0 * np.sqrt(Jj * Jn) * np.cos(theta)
    return spec.potential.G(np.maximum(x, 0.0))


def _spectral(Jj, Jn, spec: ModelSpec, M: int):
    """rfft coefficients c_k of theta -> G(J_j, J_n, theta), k = 0..M/2."""
    grid = 2.0 * np.pi * np.arange(M) / M
    samples = bond_potential(Jj[..., None], Jn[..., None], grid, spec)
    return np.fft.rfft(samples, axis=-1) / M


def _antiderivative(c: np.ndarray, theta):
    """A(theta) = int_0^theta G0 and A'(theta) = G0(theta) from the series.

    The Nyquist coefficient is dropped; its antiderivative is not periodic.
    """
    M2 = c.shape[-1] - 1
    k = np.arange(1, M2)
    ck = c[..., 1:M2]
    e = np.exp(1j * k * theta[..., None])
    A = 2.0 * np.real(ck * (e - 1.0) / (1j * k)).sum(axis=-1)
    dA = 2.0 * np.real(ck * e).sum(axis=-1)
    return A, dA


def phi_pairs(u, spec: ModelSpec, points: int = 256):
    """Phi_{jn} for every active ordered pair, shape (..., 2E)."""
    pairs = active_pairs(spec)
    u = np.asarray(u, dtype=complex)
    if len(pairs) == 0:
        return np.zeros(u.shape[:-1] + (0,))
    Jj, Jn, theta, df = _bond_arguments(u, spec, pairs)
    c = _spectral(Jj, Jn, spec, points)
    A, _ = _antiderivative(c, theta)
    return 0.25 * A / df


def phi_value(u, spec: ModelSpec, points: int = 256):
    """Phi(u) = sum over ordered pairs of Phi_{jn}."""
    return phi_pairs(u, spec, points).sum(axis=-1)


def phi_linear_closed(u, spec: ModelSpec):
    """Phi for G(x) = x: -sqrt(J_j J_n) sin(theta_jn) / (f_j - f_n) per pair."""
    pairs = active_pairs(spec)
    u = np.asarray(u, dtype=complex)
    if len(pairs) == 0:
        return np.zeros(u.shape[:-1])
    Jj, Jn, theta, df = _bond_arguments(u, spec, pairs)
    return (-np.sqrt(Jj * Jn) * np.sin(theta) / df).sum(axis=-1)


def homological_residual(u, spec: ModelSpec, points: int = 256):
    """|G~ + {F~, Phi} - <G~>| on the active bonds.

    G~ is evaluated directly on the state, <G~> from the zeroth Fourier
    coefficient and {F~, Phi} = -sum (f_j - f_n) d_theta Phi_jn from the
    derivative of the quadrature antiderivative.
    """
    pairs = active_pairs(spec)
    u = np.asarray(u, dtype=complex)
    if len(pairs) == 0:
        return np.zeros(u.shape[:-1])
    Jj, Jn, theta, df = _bond_arguments(u, spec, pairs)
    diff = u[..., pairs[:, 0]] - u[..., pairs[:, 1]]
    G_tilde = 0.25 * spec.potential.G(np.abs(diff) ** 2).sum(axis=-1)
    c = _spectral(Jj, Jn, spec, points)
    G_mean = 0.25 * np.real(c[..., 0]).sum(axis=-1)
    _, dA = _antiderivative(c, theta)
    dphi = 0.25 * dA / df
    bracket = -(df * dphi).sum(axis=-1)
    return np.abs(G_tilde + bracket - G_mean)


# --------------------------------------------------------------------------
# gradient of Phi


def _scatter(values: np.ndarray, index: np.ndarray, N: int) -> np.ndarray:
    onehot = np.zeros((len(index), N))
    onehot[np.arange(len(index)), index] = 1.0
    return values @ onehot


def grad_phi_linear(u, spec: ModelSpec) -> np.ndarray:
    """Analytic nabla Phi = 2 d Phi / d conj(u) for G(x) = x.

    Per ordered pair Phi_jn = -Im(u_j conj u_n) / (2 D_jn) with
    D_jn = sigma_j f(|u_j|^2) - sigma_n f(|u_n|^2).
    """
    fprime = spec.frequency.fprime
    if fprime is None:
        raise ValueError("analytic gradient needs f'")
    pairs = active_pairs(spec)
    u = np.asarray(u, dtype=complex)
    N = spec.lattice.N
    if len(pairs) == 0:
        return np.zeros_like(u)
    j, n = pairs[:, 0], pairs[:, 1]
    uj, un = u[..., j], u[..., n]
    sj, sn = spec.signs[j], spec.signs[n]
    xj, xn = np.abs(uj) ** 2, np.abs(un) ** 2
    D = sj * spec.frequency.f(xj) - sn * spec.frequency.f(xn)
    Q = np.imag(uj * np.conj(un))
    dQ_j, dQ_n = 1j * un, -1j * uj
    dD_j = 2.0 * sj * fprime(xj) * uj
    dD_n = -2.0 * sn * fprime(xn) * un
    g_j = -0.5 * (dQ_j / D - Q * dD_j / D**2)
    g_n = -0.5 * (dQ_n / D - Q * dD_n / D**2)
    return _scatter(g_j, j, N) + _scatter(g_n, n, N)


def grad_phi_fd(u, spec: ModelSpec, step: float = 1e-6, points: int = 256) -> np.ndarray:
    """Central differences of phi_value in every real coordinate."""
    u = np.asarray(u, dtype=complex)
    N = u.shape[-1]
    h = step * np.maximum(1.0, np.abs(u).max(axis=-1, keepdims=True))
    out = np.zeros_like(u)
    for k in range(N):
        for unit in (1.0, 1j):
            e = np.zeros(N, dtype=complex)
            e[k] = unit
            up = phi_value(u + h * e, spec, points)
            dn = phi_value(u - h * e, spec, points)
            d = (up - dn) / (2.0 * h[..., 0])
            out[..., k] += unit * d
    return out


def grad_phi(u, spec: ModelSpec, params: FlowParams | None = None) -> np.ndarray:
    params = params or FlowParams()
    mode = params.gradient
    if mode == "auto":
        mode = "analytic" if (spec.potential.name == "linear" and spec.frequency.fprime) else "fd"
    if mode == "analytic":
        return grad_phi_linear(u, spec)
    return grad_phi_fd(u, spec, params.fd_step, params.points)


# --------------------------------------------------------------------------
# time-one maps


def _flow(u, eps: float, spec: ModelSpec, params: FlowParams, direction: float, substeps: int):
    w = np.array(u, dtype=complex)
    c = direction * np.sqrt(eps)
    h = 1.0 / substeps

    def rhs(x):
        return c * 1j * grad_phi(x, spec, params)

    for _ in range(substeps):
        k1 = rhs(w)
        k2 = rhs(w + 0.5 * h * k1)
        k3 = rhs(w + 0.5 * h * k2)
        k4 = rhs(w + h * k3)
        w = w + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(w)) or np.abs(w).max() > 1e6:
            raise FlowDiverged("generator flow left the admissible region (|u_j| > 1e6)")
    return w


def _time_one(u, eps, spec, params, direction):
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    params = params or FlowParams()
    if eps == 0.0:
        return np.array(u, dtype=complex)
    S = params.substeps
    w = _flow(u, eps, spec, params, direction, S)
    if params.tolerance is None:
        return w
    for _ in range(params.max_doublings):
        S *= 2
        w2 = _flow(u, eps, spec, params, direction, S)
        if np.abs(w2 - w).max() < params.tolerance:
            return w2
        w = w2
    return w


def forward_map(u, eps: float, spec: ModelSpec, params: FlowParams | None = None) -> np.ndarray:
    """u -> v: time-one map of dw/ds = -sqrt(eps) i nabla Phi(w)."""
    return _time_one(u, eps, spec, params, -1.0)


def inverse_map(v, eps: float, spec: ModelSpec, params: FlowParams | None = None) -> np.ndarray:
    """v -> u: time-one map of dw/ds = +sqrt(eps) i nabla Phi(w)."""
    return _time_one(v, eps, spec, params, +1.0)


def action_shift(u, eps: float, spec: ModelSpec, params: FlowParams | None = None) -> np.ndarray:
    """|I_j(u) - J_j(v)| per node with v = forward_map(u)."""
    u = np.asarray(u, dtype=complex)
    if eps == 0.0:
        return np.zeros(u.shape, dtype=float)
    v = forward_map(u, eps, spec, params)
    return np.abs(0.5 * np.abs(u) ** 2 - 0.5 * np.abs(v) ** 2)


def map_jacobian(u, eps: float, spec: ModelSpec, params: FlowParams | None = None,
                 h: float = 1e-6) -> np.ndarray:
    """Real (2N x 2N) Jacobian of forward_map in coordinates (x_1, y_1, ...)."""
    u = np.asarray(u, dtype=complex)
    N = u.shape[-1]
    Jac = np.empty((2 * N, 2 * N))
    for col in range(2 * N):
        e = np.zeros(N, dtype=complex)
        e[col // 2] = 1.0 if col % 2 == 0 else 1j
        d = (forward_map(u + h * e, eps, spec, params) - forward_map(u - h * e, eps, spec, params)) / (2 * h)
        Jac[0::2, col] = d.real
        Jac[1::2, col] = d.imag
    return Jac
