"""Box lattices in Z^d, spin signs and exponentially weighted norms."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Node = tuple[int, ...]


def _as_node(j, d: int) -> Node:
    if isinstance(j, (int, np.integer)):
        j = (int(j),)
    node = tuple(int(x) for x in j)
    if len(node) != d:
        raise ValueError(f"node {node} has {len(node)} coordinates, lattice has d={d}")
    return node


@dataclass(frozen=True, eq=False)
class Lattice:
    """Finite box C = prod_a {0..extents[a]-1} with free boundaries.

    Nodes are stored in lexicographic order; every vector over C uses that
    order. ``defects`` holds node indices of the defect set C_D and
    ``defect_signs`` the spin sign configured on each of them.
    """

    dim: int
    extents: tuple[int, ...]
    nodes: tuple[Node, ...]
    neighbors: tuple[tuple[int, ...], ...]
    defects: frozenset[int] = frozenset()
    defect_signs: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        index = {node: i for i, node in enumerate(self.nodes)}
        object.__setattr__(self, "_index", index)
        coords = np.array(self.nodes, dtype=np.int64).reshape(len(self.nodes), self.dim)
        dist = np.abs(coords[:, None, :] - coords[None, :, :]).sum(axis=-1)
        object.__setattr__(self, "_coords", coords)
        object.__setattr__(self, "_dist", dist)
        bonds = sorted((i, k) for i, nb in enumerate(self.neighbors) for k in nb if i < k)
        object.__setattr__(self, "_bonds", np.array(bonds, dtype=np.int64).reshape(-1, 2))

    @property
    def N(self) -> int:
        return len(self.nodes)

    def index(self, j) -> int:
        node = _as_node(j, self.dim)
        try:
            return self._index[node]
        except KeyError:
            raise ValueError(f"node {node} is not in the lattice") from None

    @property
    def coords(self) -> np.ndarray:
        """(N, d) integer coordinates."""
        return self._coords

    @property
    def distances(self) -> np.ndarray:
        """(N, N) matrix of l1 distances |j - k|."""
        return self._dist

    @property
    def bonds(self) -> np.ndarray:
        """Unordered nearest-neighbour bonds as an (E, 2) array with a < b."""
        return self._bonds

    @property
    def ordered_pairs(self) -> np.ndarray:
        """All ordered pairs (j, k) with |j - k| = 1; each bond appears twice."""
        b = self._bonds
        return np.concatenate([b, b[:, ::-1]], axis=0)

    def incidence(self, bonds: np.ndarray | None = None) -> np.ndarray:
        """(E, N) matrix with +1 at the first and -1 at the second end of each bond."""
        b = self._bonds if bonds is None else bonds
        D = np.zeros((len(b), self.N))
        D[np.arange(len(b)), b[:, 0]] = 1.0
        D[np.arange(len(b)), b[:, 1]] = -1.0
        return D

    @property
    def signs(self) -> np.ndarray:
        """Per-node spin signs as a float array."""
        s = np.where(self._coords.sum(axis=1) % 2 == 0, 1.0, -1.0)
        for i, sgn in self.defect_signs.items():
            s[i] = float(sgn)
        return s

    @property
    def defect_closure(self) -> frozenset[int]:
        """C_D together with all its nearest neighbours."""
        out = set(self.defects)
        for i in self.defects:
            out.update(self.neighbors[i])
        return frozenset(out)

    def active_bonds(self) -> np.ndarray:
        """Bonds with both ends outside the defect closure."""
        closure = self.defect_closure
        keep = [not (a in closure or b in closure) for a, b in self._bonds]
        return self._bonds[np.array(keep, dtype=bool)] if len(self._bonds) else self._bonds

    def closed_neighborhood(self, i: int) -> tuple[int, ...]:
        return tuple(sorted((i, *self.neighbors[i])))


def build_lattice(
    d: int,
    extents: Sequence[int],
    defects: Iterable = (),
    defect_signs: dict | None = None,
) -> Lattice:
    """Build a free-boundary box lattice.

    ``defect_signs`` maps defect nodes to +1/-1; unlisted defects get +1, i.e.
    they rotate in the same direction regardless of parity.
    """
    if int(d) < 1:
        raise ValueError("lattice dimension d must be >= 1")
    extents = tuple(int(e) for e in extents)
    if len(extents) == 0:
        raise ValueError("extents must be non-empty")
    if len(extents) != d:
        raise ValueError(f"expected {d} extents, got {len(extents)}")
    if any(e < 1 for e in extents):
        raise ValueError("extents must be positive")

    nodes = tuple(itertools.product(*(range(e) for e in extents)))
    index = {node: i for i, node in enumerate(nodes)}
    neighbors = []
    for node in nodes:
        nb = []
        for axis in range(d):
            for step in (-1, 1):
                other = list(node)
                other[axis] += step
                k = index.get(tuple(other))
                if k is not None:
                    nb.append(k)
        neighbors.append(tuple(sorted(nb)))

    defect_idx = set()
    for j in defects:
        node = _as_node(j, d)
        if node not in index:
            raise ValueError(f"defect {node} lies outside the box {extents}")
        defect_idx.add(index[node])

    signs = {}
    for j, s in (defect_signs or {}).items():
        node = _as_node(j, d)
        if node not in index or index[node] not in defect_idx:
            raise ValueError(f"sign given for {node}, which is not a defect")
        if s not in (1, -1):
            raise ValueError("defect signs must be +1 or -1")
        signs[index[node]] = int(s)
    for i in defect_idx:
        signs.setdefault(i, 1)

    return Lattice(d, extents, nodes, tuple(neighbors), frozenset(defect_idx), signs)


def spin_sign(lattice: Lattice, j) -> int:
    """(-1)^{|j|_1}, or the configured sign when j is a defect."""
    i = lattice.index(j)
    if i in lattice.defects:
        return lattice.defect_signs[i]
    return 1 if sum(lattice.nodes[i]) % 2 == 0 else -1


@dataclass(frozen=True)
class WeightedNormParams:
    gamma: float
    q: float = 2.0
    center: int = 0

    def __post_init__(self):
        if not 0.5 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (1/2, 1), got {self.gamma}")
        if self.q < 1.0:
            raise ValueError(f"q must be >= 1, got {self.q}")


def _weights(lattice: Lattice, gamma: float, center: int) -> np.ndarray:
    return gamma ** lattice.distances[center].astype(float)


def weighted_norm(v, params: WeightedNormParams, lattice: Lattice | None = None) -> float:
    """(sum_k gamma^{|k-j|} |v_k|^q)^{1/q} around the centre node j.

    Without a lattice the vector is taken to live on a 1-D chain.
    """
    v = np.asarray(v)
    if lattice is None:
        lattice = build_lattice(1, [v.shape[-1]])
    w = _weights(lattice, params.gamma, params.center)
    return float(np.sum(w * np.abs(v) ** params.q, axis=-1) ** (1.0 / params.q))


def weighted_inner(v1, v2, gamma: float, center: int, lattice: Lattice | None = None) -> float:
    """(v1 . v2)_j = sum_k gamma^{|k-j|} Re(v1_k conj(v2_k))."""
    v1, v2 = np.asarray(v1), np.asarray(v2)
    if lattice is None:
        lattice = build_lattice(1, [v1.shape[-1]])
    WeightedNormParams(gamma, 2.0, center)
    w = _weights(lattice, gamma, center)
    return float(np.sum(w * np.real(v1 * np.conj(v2)), axis=-1))


def weight_sum(lattice: Lattice, gamma: float, center: int) -> float:
    """C(gamma) = sum_k gamma^{|j-k|}."""
    return float(_weights(lattice, gamma, center).sum())
