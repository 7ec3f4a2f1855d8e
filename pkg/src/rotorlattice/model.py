"""Hamiltonian pieces, dissipation stencils and drifts of the rotator SDE.

States are complex arrays whose last axis runs over lattice nodes; any leading
axes are treated as a batch, so ensembles evaluate in one call.
"""

from __future__ import annotations

import functools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .lattice import Lattice

log = logging.getLogger(__name__)


class AssumptionWarning(UserWarning):
    """A model ingredient fails one of the structural spot-checks."""


# --------------------------------------------------------------------------
# frequency f and its antiderivative F


@dataclass(frozen=True, eq=False)
class Frequency:
    f: Callable
    F: Callable | None = None
    fprime: Callable | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.F is None:
            object.__setattr__(self, "_F_cached", functools.lru_cache(maxsize=65536)(self._F_quad))

    def _F_quad(self, x: float) -> float:
        val, _ = integrate.quad(self.f, 0.0, x, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val

    def antiderivative(self, x):
        if self.F is not None:
            return self.F(x)
        x = np.asarray(x, dtype=float)
        flat = [self._F_cached(float(t)) for t in x.ravel()]
        return np.array(flat).reshape(x.shape)


def power_frequency(k: int = 1) -> Frequency:
    """f(x) = 1 + x^k with F(x) = x + x^{k+1}/(k+1)."""
    if int(k) < 1:
        raise ValueError("frequency power k must be >= 1")
    k = int(k)
    if k == 1:
        return Frequency(f=lambda x: 1.0 + x, F=lambda x: x + 0.5 * x**2,
                         fprime=lambda x: np.ones_like(x), name="power:1")
    return Frequency(
        f=lambda x: 1.0 + x**k,
        F=lambda x: x + x ** (k + 1) / (k + 1),
        fprime=lambda x: k * x ** (k - 1),
        name=f"power:{k}",
    )


@dataclass(frozen=True, eq=False)
class Potential:
    G: Callable
    dG: Callable
    name: str = "custom"


def linear_potential() -> Potential:
    return Potential(G=lambda x: x, dG=lambda x: np.ones_like(x), name="linear")


def sqrt_potential(shift: float = 1.0) -> Potential:
    """G(x) = sqrt(x + shift), a smooth potential of the form Ghat(sqrt(x + s))."""
    if shift <= 0:
        raise ValueError("sqrt potential needs a positive shift")
    return Potential(
        G=lambda x: np.sqrt(x + shift),
        dG=lambda x: 0.5 / np.sqrt(x + shift),
        name=f"sqrt:{shift:g}",
    )


# --------------------------------------------------------------------------
# dissipation


@dataclass(frozen=True, eq=False)
class Dissipation:
    """Dissipation g = (g_l)_l acting through radius-1 neighbourhoods.

    kind is one of ``diagonal`` (g_j = -|u_j|^{p-2} u_j), ``linear``
    (g_j = -u_j + sum_k b_jk u_k, p = 2), ``example2`` (1-D chain flux model,
    p = 4), ``custom`` (user callable ``func(u, lattice)``) or ``none``.
    """

    kind: str = "diagonal"
    p: int = 2
    coupling: np.ndarray | None = None
    func: Callable | None = None

    def __post_init__(self):
        if self.kind not in {"diagonal", "linear", "example2", "custom", "none"}:
            raise ValueError(f"unknown dissipation kind {self.kind!r}")
        if int(self.p) < 2:
            raise ValueError("dissipation power p must be >= 2")
        if self.kind == "linear" and self.p != 2:
            raise ValueError("linear dissipation requires p = 2")
        if self.kind == "example2" and self.p != 4:
            raise ValueError("the example-2 stencil has p = 4")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom dissipation needs a callable")

    def stencil(self, lattice: Lattice, j: int) -> tuple[int, ...]:
        """Nodes whose state g_j reads."""
        if self.kind in {"diagonal", "none"}:
            return (j,)
        if self.kind == "linear":
            B = self.coupling_matrix(lattice)
            return tuple(sorted({j, *np.flatnonzero(B[j]).tolist()}))
        return lattice.closed_neighborhood(j)

    def coupling_matrix(self, lattice: Lattice) -> np.ndarray:
        N = lattice.N
        if self.coupling is None:
            return np.zeros((N, N), dtype=complex)
        b = np.asarray(self.coupling, dtype=complex)
        if b.ndim == 0:
            B = np.zeros((N, N), dtype=complex)
            for i, nb in enumerate(lattice.neighbors):
                B[i, list(nb)] = b
            return B
        if b.shape != (N, N):
            raise ValueError(f"coupling matrix must be {N}x{N}")
        off = (b != 0) & (lattice.distances != 1)
        if off.any():
            raise ValueError("coupling b_jk may only connect nearest neighbours")
        return b


def diagonal(p: int = 2) -> Dissipation:
    return Dissipation("diagonal", p=p)


def linear_coupled(coupling) -> Dissipation:
    return Dissipation("linear", p=2, coupling=coupling)


def example2() -> Dissipation:
    return Dissipation("example2", p=4)


# --------------------------------------------------------------------------
# model specification


@dataclass(frozen=True, eq=False)
class ModelSpec:
    lattice: Lattice
    frequency: Frequency = field(default_factory=power_frequency)
    potential: Potential = field(default_factory=linear_potential)
    dissipation: Dissipation = field(default_factory=diagonal)
    temperatures: np.ndarray | float = 1.0
    eps: float = 0.01
    a: float = 0.5
    check_assumptions: bool = True

    def __post_init__(self):
        N = self.lattice.N
        T = np.broadcast_to(np.asarray(self.temperatures, dtype=float), (N,)).copy()
        T.setflags(write=False)
        object.__setattr__(self, "temperatures", T)
        if np.any(T < 0) or not np.all(np.isfinite(T)):
            raise ValueError("temperatures must be finite and non-negative")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must lie in [0, 1], got {self.eps}")
        if self.a < 0.5:
            raise ValueError(f"coupling exponent a must be >= 1/2, got {self.a}")
        if self.dissipation.kind == "example2" and self.lattice.dim != 1:
            raise ValueError("the example-2 stencil is defined on 1-D chains only")
        if self.dissipation.kind == "linear":
            self.dissipation.coupling_matrix(self.lattice)
        if self.dissipation.kind == "none":
            warnings.warn(
                "no dissipation: only Hamiltonian and noise terms remain; "
                "uniform-in-time bounds do not apply",
                AssumptionWarning,
                stacklevel=3,
            )
        if self.check_assumptions:
            self._check_frequency()

        object.__setattr__(self, "_signs", self.lattice.signs)
        object.__setattr__(self, "_isigns", 1j * self.lattice.signs)
        object.__setattr__(self, "_noisy", bool(self.eps > 0 and np.any(T > 0)))
        object.__setattr__(self, "_damped", bool(self.dissipation.kind != "none" and self.eps > 0))
        D = self.lattice.incidence()
        object.__setattr__(self, "_D", D.astype(complex))
        # for G(x) = x the interaction force is linear: i eps^a D^T D u
        object.__setattr__(self, "_iL", 1j * self.coupling_strength * (D.T @ D))
        if self.dissipation.kind == "linear":
            object.__setattr__(self, "_B", self.dissipation.coupling_matrix(self.lattice))

    def _check_frequency(self):
        p = self.dissipation.p
        x = np.concatenate([[0.0], np.geomspace(1e-3, 1e4, 200)])
        ratio = np.asarray(self.frequency.f(x), dtype=float) / (1.0 + x ** (p / 2))
        c = ratio.min()
        if not c >= 1e-3:
            raise ValueError(
                f"frequency {self.frequency.name} does not dominate 1 + x^(p/2) "
                f"for p={p} (min ratio {c:.2e} on the check grid)"
            )

    @property
    def signs(self) -> np.ndarray:
        return self._signs

    @property
    def coupling_strength(self) -> float:
        return self.eps**self.a

    def with_(self, **changes) -> "ModelSpec":
        kw = dict(
            lattice=self.lattice,
            frequency=self.frequency,
            potential=self.potential,
            dissipation=self.dissipation,
            temperatures=self.temperatures,
            eps=self.eps,
            a=self.a,
            check_assumptions=self.check_assumptions,
        )
        kw.update(changes)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AssumptionWarning)
            return ModelSpec(**kw)

    def f_nodes(self, x):
        """f_j(x_j) = sigma_j f(x_j)."""
        return self._signs * self.frequency.f(x)

    def F_nodes(self, x):
        return self._signs * self.frequency.antiderivative(x)


def _check_state(u) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if not np.all(np.isfinite(u)):
        raise FloatingPointError("state contains non-finite entries")
    return u


def _pair_G(u, spec: ModelSpec):
    pairs = spec.lattice.ordered_pairs
    diff = u[..., pairs[:, 0]] - u[..., pairs[:, 1]]
    return pairs, spec.potential.G(np.abs(diff) ** 2)


def hamiltonian(u, spec: ModelSpec):
    """H = 1/2 sum_j F_j(|u_j|^2) + eps^a/4 sum_{ordered |j-k|=1} G(|u_j-u_k|^2)."""
    u = _check_state(u)
    _, Gp = _pair_G(u, spec)
    F = spec.F_nodes(np.abs(u) ** 2)
    return 0.5 * F.sum(axis=-1) + 0.25 * spec.coupling_strength * Gp.sum(axis=-1)


def local_energy(u, spec: ModelSpec) -> np.ndarray:
    """H_j = 1/2 F_j(|u_j|^2) + eps^a/4 sum_{k ~ j} G(|u_j - u_k|^2)."""
    u = _check_state(u)
    pairs, Gp = _pair_G(u, spec)
    # pairs are grouped by their first entry via a dense one-hot product
    onehot = np.zeros((len(pairs), spec.lattice.N))
    onehot[np.arange(len(pairs)), pairs[:, 0]] = 1.0
    bond_part = Gp @ onehot
    return 0.5 * spec.F_nodes(np.abs(u) ** 2) + 0.25 * spec.coupling_strength * bond_part


def interaction_force(u, spec: ModelSpec) -> np.ndarray:
    """i eps^a sum_{k ~ j} G'(|u_j - u_k|^2)(u_j - u_k)."""
    if spec.potential.name == "linear":
        return u @ spec._iL
    D = spec._D
    diff = u @ D.T
    w = spec.potential.dG(diff.real**2 + diff.imag**2) * diff
    return 1j * spec.coupling_strength * (w @ D)


def grad_full(u, spec: ModelSpec) -> np.ndarray:
    """i nabla_j H, with nabla_j = 2 d/d(conj u_j)."""
    u = _check_state(u)
    return _grad_unchecked(u, spec)


def _grad_unchecked(u, spec: ModelSpec) -> np.ndarray:
    rot = spec._isigns * spec.frequency.f(u.real**2 + u.imag**2) * u
    if spec.potential.name == "linear":
        rot += u @ spec._iL
        return rot
    if len(spec.lattice.bonds) == 0:
        return rot
    return rot + interaction_force(u, spec)


def _drift_unchecked(u, spec: ModelSpec) -> np.ndarray:
    out = _grad_unchecked(u, spec)
    if spec._damped:
        out += spec.eps * dissipation(u, spec)
    return out


def dissipation(u, spec: ModelSpec) -> np.ndarray:
    """g(u) for the configured stencil."""
    u = np.asarray(u, dtype=complex)
    dis = spec.dissipation
    if dis.kind == "none":
        return np.zeros_like(u)
    if dis.kind == "diagonal":
        if dis.p == 2:
            return -u
        return -(np.abs(u) ** (dis.p - 2)) * u
    if dis.kind == "linear":
        return -u + u @ spec._B.T
    if dis.kind == "example2":
        return _example2_g(u)
    return np.asarray(dis.func(u, spec.lattice), dtype=complex)


def _example2_g(u) -> np.ndarray:
    a2 = np.abs(u) ** 2
    right = np.zeros_like(a2)
    left = np.zeros_like(a2)
    right[..., :-1] = a2[..., 1:]
    left[..., 1:] = a2[..., :-1]
    return 0.25 * (right - left - a2) * u


def dissipation_local(u, spec: ModelSpec, j: int) -> np.ndarray:
    """g_j(u) only; avoids evaluating the whole vector on large quadrature grids."""
    dis = spec.dissipation
    uj = u[..., j]
    if dis.kind == "none":
        return np.zeros_like(uj)
    if dis.kind == "diagonal":
        return -uj if dis.p == 2 else -(np.abs(uj) ** (dis.p - 2)) * uj
    if dis.kind == "linear":
        row = spec._B[j]
        nz = np.flatnonzero(row)
        return -uj + u[..., nz] @ row[nz]
    if dis.kind == "example2":
        N = spec.lattice.N
        right = np.abs(u[..., j + 1]) ** 2 if j + 1 < N else 0.0
        left = np.abs(u[..., j - 1]) ** 2 if j >= 1 else 0.0
        return 0.25 * (right - left - np.abs(uj) ** 2) * uj
    return dissipation(u, spec)[..., j]


def drift_full(u, spec: ModelSpec) -> np.ndarray:
    """Deterministic drift of the full SDE: i nabla H + eps g."""
    return _drift_unchecked(_check_state(u), spec)
