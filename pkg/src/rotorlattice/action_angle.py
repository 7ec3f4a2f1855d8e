"""Action-angle variables and averaging over the angle torus.

Averages are taken only over the angles an observable actually reads (its
declared stencil); the remaining angles drop out of the integral exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lattice import Lattice
from .model import ModelSpec, dissipation, dissipation_local

TWO_PI = 2.0 * np.pi


class StencilTooLarge(ValueError):
    """Tensor quadrature refused; use the Monte Carlo scheme instead."""


@dataclass(frozen=True)
class ActionAngleState:
    actions: np.ndarray
    angles: np.ndarray

    def to_complex(self) -> np.ndarray:
        return from_action_angle(self.actions, self.angles)


def to_action_angle(u) -> ActionAngleState:
    """I_k = |u_k|^2 / 2 and phi_k = arg u_k in [0, 2 pi), with phi_k = 0 at u_k = 0."""
    u = np.asarray(u, dtype=complex)
    I = 0.5 * (u.real**2 + u.imag**2)
    phi = np.mod(np.angle(u), TWO_PI)
    # mod can round a tiny negative angle up to exactly 2 pi
    phi = np.where(phi >= TWO_PI, 0.0, phi)
    phi = np.where(u == 0, 0.0, phi)
    return ActionAngleState(I, phi)


def from_action_angle(I, phi) -> np.ndarray:
    I = np.asarray(I, dtype=float)
    if np.any(I < 0):
        raise ValueError("actions must be non-negative")
    return np.sqrt(2.0 * I) * np.exp(1j * np.asarray(phi, dtype=float))


@dataclass(frozen=True)
class AveragingScheme:
    """How <.> is computed.

    ``quadrature`` is a tensor trapezoid rule with ``points`` nodes per angle;
    when points**s would exceed ``max_grid`` the per-angle count is lowered, but
    never below 8. ``mc`` draws ``samples`` uniform angle vectors.
    """

    method: str = "quadrature"
    points: int = 64
    samples: int = 4096
    seed: int = 0
    max_angles: int = 7
    max_grid: int = 2**18

    def __post_init__(self):
        if self.method not in {"quadrature", "mc"}:
            raise ValueError(f"unknown averaging method {self.method!r}")
        if self.points < 8:
            raise ValueError("need at least 8 points per angle")
        if self.samples < 1000:
            raise ValueError("Monte Carlo averaging needs at least 1000 samples")

    def points_for(self, s: int) -> int:
        if s > self.max_angles:
            raise StencilTooLarge(
                f"stencil of {s} angles exceeds the tensor-quadrature cap "
                f"({self.max_angles}); use method='mc'"
            )
        n = self.points
        if n**s > self.max_grid:
            n = max(8, int(np.floor(self.max_grid ** (1.0 / s) + 1e-9)))
        return n


@dataclass(frozen=True)
class Observable:
    """A real function of the complex state together with the nodes it reads."""

    func: Callable
    stencil: tuple[int, ...]

    def __call__(self, u):
        return self.func(u)


def _torus_grid(s: int, n: int) -> np.ndarray:
    """(n**s, s) trapezoid nodes on T^s."""
    theta = TWO_PI * np.arange(n) / n
    if s == 0:
        return np.zeros((1, 0))
    mesh = np.meshgrid(*([theta] * s), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _lift(amplitudes: np.ndarray, stencil, angles: np.ndarray, base_phase=None) -> np.ndarray:
    """States with the stencil angles set from ``angles`` and the rest kept at
    ``base_phase`` (angle 0 by default)."""
    P = angles.shape[0]
    N = amplitudes.shape[-1]
    u = np.empty((P, N), dtype=complex)
    base = amplitudes if base_phase is None else amplitudes * base_phase
    u[:] = base
    if len(stencil):
        st = list(stencil)
        u[:, st] = amplitudes[st] * np.exp(1j * angles)
    return u


def angle_average(obs: Observable, I, scheme: AveragingScheme | None = None) -> float:
    """<P>(I): integral of P over the torus of its stencil angles."""
    scheme = scheme or AveragingScheme()
    I = np.asarray(I, dtype=float)
    amp = np.sqrt(2.0 * I)
    s = len(obs.stencil)
    if scheme.method == "mc":
        return mc_average(obs, I, scheme.samples, np.random.default_rng(scheme.seed))[0]
    n = scheme.points_for(s)
    grid = _torus_grid(s, n)
    vals = np.asarray(obs(_lift(amp, obs.stencil, grid)), dtype=float)
    return float(np.mean(vals))


def mc_average(obs: Observable, I, samples: int, rng, angle_offset: float = 0.0):
    """Monte Carlo estimate of <P>(I) and its standard error.

    ``angle_offset`` shifts every angle, stencil or not, by the same constant.
    """
    I = np.asarray(I, dtype=float)
    amp = np.sqrt(2.0 * I)
    angles = rng.uniform(0.0, TWO_PI, size=(samples, len(obs.stencil))) + angle_offset
    base = np.exp(1j * angle_offset)
    vals = np.asarray(obs(_lift(amp, obs.stencil, angles, base_phase=base)), dtype=float)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(samples))


# --------------------------------------------------------------------------
# averaged drift R_j and effective drift K_j


def drift_observable(spec: ModelSpec, j: int) -> Observable:
    """P = g_j(u) . u_j, whose angle average is R_j."""

    def P(u):
        g = dissipation_local(u, spec, j)
        uj = u[..., j]
        return g.real * uj.real + g.imag * uj.imag

    return Observable(P, spec.dissipation.stencil(spec.lattice, j))


def averaged_drift_closed(I, spec: ModelSpec) -> np.ndarray:
    """Closed-form R(I) for the built-in dissipations."""
    I = np.asarray(I, dtype=float)
    dis = spec.dissipation
    if dis.kind == "none":
        return np.zeros_like(I)
    if dis.kind == "diagonal":
        return -((2.0 * I) ** (dis.p / 2))
    if dis.kind == "linear":
        return -2.0 * I
    if dis.kind == "example2":
        right = np.zeros_like(I)
        left = np.zeros_like(I)
        right[..., :-1] = I[..., 1:]
        left[..., 1:] = I[..., :-1]
        return right * I - left * I - I**2
    raise NotImplementedError("no closed form for custom dissipation")


def averaged_drift_R(I, spec: ModelSpec, scheme: AveragingScheme | None = None,
                     closed_form: bool = False) -> np.ndarray:
    """R_j(I) = <g_j(u) . u_j>.

    With ``closed_form`` the built-in formulas are returned; otherwise every
    component is integrated numerically on the stencil torus.
    """
    I = np.asarray(I, dtype=float)
    if np.any(I < 0):
        raise ValueError("actions must be non-negative")
    if closed_form and spec.dissipation.kind != "custom":
        return averaged_drift_closed(I, spec)
    scheme = scheme or AveragingScheme()
    N = spec.lattice.N
    out = np.empty(I.shape, dtype=float)
    observables = [drift_observable(spec, j) for j in range(N)]
    for idx in np.ndindex(I.shape[:-1]):
        for j, obs in enumerate(observables):
            out[idx + (j,)] = angle_average(obs, I[idx], scheme)
    return out


def effective_drift_closed(v, spec: ModelSpec) -> np.ndarray:
    """K(v) for built-ins: diagonal and example-2 stencils are rotation
    equivariant so K = g; the linear coupling averages out, K = -v."""
    v = np.asarray(v, dtype=complex)
    kind = spec.dissipation.kind
    if kind == "linear":
        return -v
    if kind in {"diagonal", "example2", "none"}:
        return dissipation(v, spec)
    raise NotImplementedError("no closed form for custom dissipation")


def effective_drift_K(v, spec: ModelSpec, scheme: AveragingScheme | None = None,
                      closed_form: bool = False) -> np.ndarray:
    """K_j(v) = int e^{-i theta_j} g_j(Psi_theta v) d theta over the stencil torus."""
    v = np.asarray(v, dtype=complex)
    if closed_form and spec.dissipation.kind != "custom":
        return effective_drift_closed(v, spec)
    scheme = scheme or AveragingScheme()
    N = spec.lattice.N
    out = np.empty(v.shape, dtype=complex)
    stencils = [spec.dissipation.stencil(spec.lattice, j) for j in range(N)]
    for idx in np.ndindex(v.shape[:-1]):
        vv = v[idx]
        for j, st in enumerate(stencils):
            pos = st.index(j)
            if scheme.method == "mc":
                rng = np.random.default_rng(scheme.seed)
                grid = rng.uniform(0.0, TWO_PI, size=(scheme.samples, len(st)))
            else:
                grid = _torus_grid(len(st), scheme.points_for(len(st)))
            u = np.empty((grid.shape[0], N), dtype=complex)
            u[:] = vv
            u[:, list(st)] *= np.exp(1j * grid)
            vals = np.exp(-1j * grid[:, pos]) * dissipation_local(u, spec, j)
            out[idx + (j,)] = np.mean(vals)
    return out


def flow_of_actions(I, lattice: Lattice) -> tuple[np.ndarray, np.ndarray]:
    """Theta(j) = 2 I_{j+1} I_j on a chain and its discrete gradient
    (Theta(j) - Theta(j-1)) / 2, with zero actions beyond both ends."""
    if lattice.dim != 1:
        raise ValueError("the flow of actions is defined on 1-D chains only")
    I = np.asarray(I, dtype=float)
    right = np.zeros_like(I)
    right[..., :-1] = I[..., 1:]
    theta = 2.0 * right * I
    prev = np.zeros_like(theta)
    prev[..., 1:] = theta[..., :-1]
    return theta, 0.5 * (theta - prev)


def full_torus_average(obs: Observable, I, n: int = 16) -> float:
    """Average over every angle of the lattice; only usable for N <= 4.

    Kept as an independent check on the stencil reduction."""
    I = np.asarray(I, dtype=float)
    N = I.shape[-1]
    if N > 4:
        raise ValueError("full-torus averaging is limited to N <= 4")
    grid = _torus_grid(N, n)
    u = np.sqrt(2.0 * I) * np.exp(1j * grid)
    return float(np.mean(obs(u)))


__all__ = [
    "ActionAngleState",
    "AveragingScheme",
    "Observable",
    "StencilTooLarge",
    "angle_average",
    "averaged_drift_R",
    "averaged_drift_closed",
    "drift_observable",
    "effective_drift_K",
    "effective_drift_closed",
    "flow_of_actions",
    "from_action_angle",
    "full_torus_average",
    "mc_average",
    "to_action_angle",
]
