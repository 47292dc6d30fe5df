"""Collocation nodes on [0, 1] and their spectral integration matrices.

Node sets are normalized to the unit interval; the integrators scale by the
step size.  A node set is a union of *segments* sharing endpoints: a single
segment for a classical rule (Gauss-Lobatto, Clenshaw-Curtis), several for a
composite set whose Lagrange basis is piecewise polynomial.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from numpy.polynomial import legendre as leg

DEDUP_TOL = 1e-12


@dataclass(frozen=True)
class NodeSet:
    """Sorted nodes on [0, 1] with both endpoints included.

    ``segments`` lists ``(first, last)`` node indices of each polynomial
    piece; consecutive pieces share their boundary node.
    """

    nodes: np.ndarray
    kind: str
    segments: tuple = field(default=None)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a node set needs at least two nodes")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise ValueError("node sets must start at 0 and end at 1")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing (duplicate nodes?)")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        segs = self.segments
        if segs is None:
            segs = ((0, nodes.size - 1),)
        segs = tuple((int(a), int(b)) for a, b in segs)
        if segs[0][0] != 0 or segs[-1][1] != nodes.size - 1:
            raise ValueError("segments must cover every node")
        for (a0, b0), (a1, b1) in zip(segs, segs[1:]):
            if b0 != a1:
                raise ValueError("consecutive segments must share an endpoint node")
        if any(b <= a for a, b in segs):
            raise ValueError("empty segment")
        object.__setattr__(self, "segments", segs)

    def __len__(self):
        return self.nodes.size

    @property
    def M(self) -> int:
        """Number of sub-intervals (one less than the number of nodes)."""
        return self.nodes.size - 1

    @property
    def is_composite(self) -> bool:
        return len(self.segments) > 1

    @cached_property
    def matrices(self) -> "IntegrationMatrices":
        return integration_matrices(self)

    def __eq__(self, other):
        if not isinstance(other, NodeSet):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.segments == other.segments
            and np.array_equal(self.nodes, other.nodes)
        )

    def __hash__(self):
        return hash((self.kind, self.segments, self.nodes.tobytes()))


@dataclass(frozen=True)
class IntegrationMatrices:
    """``Q[m-1, j] = int_0^{tau_m} l_j``, ``S[m, j] = int_{tau_m}^{tau_{m+1}} l_j``.

    Both are ``M x (M+1)``: row ``m - 1`` of ``Q`` belongs to node ``m``.
    """

    Q: np.ndarray
    S: np.ndarray


def gauss_lobatto(n: int) -> NodeSet:
    """``n`` Gauss-Lobatto nodes mapped to [0, 1]."""
    if n < 2:
        raise ValueError(f"Gauss-Lobatto needs at least 2 nodes, got {n}")
    inner = np.sort(leg.legroots(leg.legder([0] * (n - 1) + [1]))) if n > 2 else np.array([])
    x = np.concatenate([[-1.0], inner, [1.0]])
    # symmetrize so the set is exactly mirror-symmetric about 1/2
    x = 0.5 * (x - x[::-1])
    tau = (1.0 + x) / 2.0
    tau[0], tau[-1] = 0.0, 1.0
    if n % 2:
        tau[n // 2] = 0.5
    return NodeSet(tau, "gauss-lobatto")


def clenshaw_curtis(n: int) -> NodeSet:
    """``n`` Clenshaw-Curtis (Chebyshev extreme) nodes on [0, 1]."""
    if n < 2:
        raise ValueError(f"Clenshaw-Curtis needs at least 2 nodes, got {n}")
    j = np.arange(n)
    tau = (1.0 - np.cos(np.pi * (j / (n - 1)))) / 2.0
    tau[0], tau[-1] = 0.0, 1.0
    if n % 2:
        tau[n // 2] = 0.5
    return NodeSet(tau, "clenshaw-curtis")


def composite(inner: NodeSet, breakpoints) -> NodeSet:
    """Copy ``inner`` into every interval between consecutive ``breakpoints``."""
    bp = np.asarray(breakpoints, dtype=float)
    if bp[0] != 0.0 or bp[-1] != 1.0 or np.any(np.diff(bp) <= 0):
        raise ValueError("breakpoints must increase from 0 to 1")
    pieces = [np.array([0.0])]
    segments = []
    for lo, hi in zip(bp[:-1], bp[1:]):
        mapped = lo + (hi - lo) * inner.nodes[1:]
        mapped[-1] = hi
        start = sum(p.size for p in pieces) - 1
        pieces.append(mapped)
        segments.append((start, start + mapped.size))
    nodes = np.concatenate(pieces)
    if np.any(np.diff(nodes) <= DEDUP_TOL):
        raise ValueError("composite node set has coincident nodes")
    return NodeSet(nodes, "composite", tuple(segments))


def _lagrange_integrals(x: np.ndarray, lo: float, hi: float, targets: np.ndarray) -> np.ndarray:
    # K[t, j] = int_lo^{targets[t]} l_j(s) ds for the Lagrange basis on x in [lo, hi]
    scale = (hi - lo) / 2.0
    xi = (x - lo) / scale - 1.0
    V = leg.legvander(xi, x.size - 1)
    coeffs = np.linalg.solve(V, np.eye(x.size))  # column j: Legendre coeffs of l_j
    anti = leg.legint(coeffs, lbnd=-1.0, axis=0)
    ti = (np.asarray(targets) - lo) / scale - 1.0
    return scale * leg.legval(ti, anti).T


def integrate_basis(source: NodeSet, targets) -> np.ndarray:
    """``K[t, j] = int_0^{targets[t]} l_j(s) ds`` for the (piecewise) Lagrange
    basis of ``source``."""
    targets = np.asarray(targets, dtype=float)
    K = np.zeros((targets.size, source.nodes.size))
    for first, last in source.segments:
        x = source.nodes[first : last + 1]
        lo, hi = x[0], x[-1]
        clipped = np.clip(targets, lo, hi)
        K[:, first : last + 1] += _lagrange_integrals(x, lo, hi, clipped)
    return K


def integration_matrices(nodes: NodeSet) -> IntegrationMatrices:
    K = integrate_basis(nodes, nodes.nodes)
    K[0] = 0.0
    Q = K[1:].copy()
    S = np.diff(K, axis=0)
    Q.setflags(write=False)
    S.setflags(write=False)
    return IntegrationMatrices(Q, S)


# -- multirate hierarchies --------------------------------------------------


@dataclass(frozen=True)
class TypeA:
    """Fine nodes from one rule over the whole step; must nest the coarse nodes."""

    fine: NodeSet


@dataclass(frozen=True)
class TypeB:
    """``inner`` rule placed on each coarse interval."""

    inner: NodeSet


@dataclass(frozen=True)
class TypeC:
    """``inner`` rule repeated ``repeats`` times inside each coarse interval."""

    inner: NodeSet
    repeats: int


FineSpec = Union[TypeA, TypeB, TypeC]


@dataclass(frozen=True)
class MultirateHierarchy:
    """Coarse and fine node sets with the cross integration matrices.

    ``Q2j``/``S2j`` integrate the component living on node set ``j`` (1 =
    coarse, 2 = fine) up to / between the fine nodes; all are
    ``M2 x (Mj + 1)``.  ``coarse_index[p]`` is the fine index of coarse node
    ``p``; ``p_map[q]`` is the left coarse node of the coarse interval that
    contains fine sub-interval ``q`` (the last fine node belongs to the last
    interval).
    """

    coarse: NodeSet
    fine: NodeSet
    Q21: np.ndarray
    Q22: np.ndarray
    S21: np.ndarray
    S22: np.ndarray
    coarse_index: np.ndarray
    p_map: np.ndarray

    @property
    def M1(self) -> int:
        return self.coarse.M

    @property
    def M2(self) -> int:
        return self.fine.M


def _fine_nodes(coarse: NodeSet, spec: FineSpec) -> NodeSet:
    if isinstance(spec, TypeA):
        return spec.fine
    if isinstance(spec, TypeB):
        return composite(spec.inner, coarse.nodes)
    if isinstance(spec, TypeC):
        if spec.repeats < 1:
            raise ValueError("repeats must be at least 1")
        pts = [0.0]
        for lo, hi in zip(coarse.nodes[:-1], coarse.nodes[1:]):
            sub = lo + (hi - lo) * np.arange(1, spec.repeats + 1) / spec.repeats
            sub[-1] = hi
            pts.extend(sub)
        return composite(spec.inner, pts)
    raise TypeError(f"unknown fine node specification {spec!r}")


def build_hierarchy(coarse: NodeSet, fine_spec: FineSpec) -> MultirateHierarchy:
    fine = _fine_nodes(coarse, fine_spec)
    # locate each coarse node among the fine nodes
    idx = np.searchsorted(fine.nodes, coarse.nodes - DEDUP_TOL)
    idx = np.minimum(idx, fine.nodes.size - 1)
    if np.any(np.abs(fine.nodes[idx] - coarse.nodes) > DEDUP_TOL):
        raise ValueError("coarse nodes are not a subset of the fine nodes")
    if isinstance(fine_spec, TypeA):
        # snap coincident fine nodes onto the coarse values
        snapped = fine.nodes.copy()
        snapped[idx] = coarse.nodes
        fine = NodeSet(snapped, fine.kind, fine.segments)
    K1 = integrate_basis(coarse, fine.nodes)
    K2 = integrate_basis(fine, fine.nodes)
    K1[0] = K2[0] = 0.0
    q = np.arange(fine.M + 1)
    p_map = np.searchsorted(idx, q, side="right") - 1
    p_map = np.minimum(p_map, coarse.M - 1)
    mats = [K1[1:].copy(), K2[1:].copy(), np.diff(K1, axis=0), np.diff(K2, axis=0)]
    for m in mats + [idx, p_map]:
        m.setflags(write=False)
    return MultirateHierarchy(coarse, fine, *mats, coarse_index=idx, p_map=p_map)
