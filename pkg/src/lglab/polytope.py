"""Finite structured-vertex families and projections onto their hulls.

A structure family is a finite set of binary part-indicator vectors,
materialized as an explicit vertex matrix.  Score vectors map into (the
convex hull of) that set three ways: highest-scoring vertex lookup,
Gibbs-weighted averaging, and Euclidean projection.  The categorical
family reduces all three to argmax, softmax and the simplex projection.

All operations are pure functions of immutable inputs and are safe to
call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from itertools import combinations, product
from typing import Sequence, Tuple

import numpy as np

from .errors import CapExceeded, NoConvergence
from .kernels import simplex_project

VERTEX_CAP = 100_000
PART_CAP = 64


class FamilyKind(str, Enum):
    CATEGORICAL = "categorical"
    K_SUBSET = "k_subset"
    ARBORESCENCE = "arborescence"


def _check_caps(n_parts: int, n_vertices: int) -> None:
    if n_parts > PART_CAP:
        raise CapExceeded(f"part dimension {n_parts} exceeds cap {PART_CAP}")
    if n_vertices > VERTEX_CAP:
        raise CapExceeded(f"vertex count {n_vertices} exceeds cap {VERTEX_CAP}")


def arborescence_arcs(n_words: int) -> list[Tuple[int, int]]:
    """Arc order for the arborescence family over ``n_words`` modifiers.

    Arcs (head, modifier) are listed by increasing head then modifier,
    heads range over 0..n_words with 0 the root, modifiers over
    1..n_words, and head == modifier is skipped.  The position of an arc
    in this list is its part index; this bijection is part of the stable
    file-format contract.
    """
    return [(h, m) for h in range(n_words + 1) for m in range(1, n_words + 1) if h != m]


def _is_arborescence(parents: Sequence[int]) -> bool:
    # parents[m-1] is the head of modifier m; valid iff every walk reaches root 0
    n = len(parents)
    for start in range(1, n + 1):
        cur = start
        hops = 0
        while cur != 0:
            cur = parents[cur - 1]
            hops += 1
            if hops > n:
                return False
    return True


def _categorical_vertices(n_classes: int) -> np.ndarray:
    _check_caps(n_classes, n_classes)
    return np.eye(n_classes, dtype=np.float64)


def _k_subset_vertices(n_parts: int, subset_size: int) -> np.ndarray:
    if not 0 < subset_size <= n_parts:
        raise ValueError(f"subset size {subset_size} out of range for {n_parts} parts")
    count = math.comb(n_parts, subset_size)
    _check_caps(n_parts, count)
    out = np.zeros((count, n_parts), dtype=np.float64)
    for row, idx in enumerate(combinations(range(n_parts), subset_size)):
        out[row, list(idx)] = 1.0
    return out


def _arborescence_vertices(n_words: int) -> np.ndarray:
    if n_words < 1:
        raise ValueError("arborescence needs at least one word")
    count = (n_words + 1) ** (n_words - 1)
    n_parts = n_words * n_words
    _check_caps(n_parts, count)
    arc_index = {arc: i for i, arc in enumerate(arborescence_arcs(n_words))}
    head_choices = [[h for h in range(n_words + 1) if h != m] for m in range(1, n_words + 1)]
    rows = []
    for parents in product(*head_choices):
        if _is_arborescence(parents):
            v = np.zeros(n_parts, dtype=np.float64)
            for m, h in enumerate(parents, start=1):
                v[arc_index[(h, m)]] = 1.0
            rows.append(v)
    vertices = np.asarray(rows)
    if len(vertices) != count:
        raise AssertionError(f"enumerated {len(vertices)} arborescences, expected {count}")
    return vertices


@dataclass(frozen=True, eq=False)
class StructureFamily:
    """A finite set of binary indicator vectors with an explicit vertex list.

    ``vertices`` has one row per structure; rows are distinct, entries are
    exactly 0 or 1, and the row order is deterministic and part of the
    public contract (it defines vertex indices).
    """

    kind: FamilyKind
    params: Tuple[int, ...]
    K: int
    vertices: np.ndarray

    def __post_init__(self):
        self.vertices.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @classmethod
    def categorical(cls, n_classes: int) -> "StructureFamily":
        return cls(FamilyKind.CATEGORICAL, (n_classes,), n_classes, _categorical_vertices(n_classes))

    @classmethod
    def k_subset(cls, n_parts: int, subset_size: int) -> "StructureFamily":
        return cls(
            FamilyKind.K_SUBSET,
            (n_parts, subset_size),
            n_parts,
            _k_subset_vertices(n_parts, subset_size),
        )

    @classmethod
    def arborescence(cls, n_words: int) -> "StructureFamily":
        return cls(
            FamilyKind.ARBORESCENCE,
            (n_words,),
            n_words * n_words,
            _arborescence_vertices(n_words),
        )

    @classmethod
    def from_config(cls, cfg: dict) -> "StructureFamily":
        kind = cfg.get("family")
        if kind == "categorical":
            return cls.categorical(int(cfg["K"]))
        if kind == "k_subset":
            return cls.k_subset(int(cfg["K"]), int(cfg["k"]))
        if kind == "arborescence":
            return cls.arborescence(int(cfg["L"]))
        raise ValueError(f"unknown family kind {kind!r}")

    def to_config(self) -> dict:
        if self.kind is FamilyKind.CATEGORICAL:
            return {"family": "categorical", "K": self.params[0]}
        if self.kind is FamilyKind.K_SUBSET:
            return {"family": "k_subset", "K": self.params[0], "k": self.params[1]}
        return {"family": "arborescence", "L": self.params[0]}


@dataclass(frozen=True)
class MeanPoint:
    """A point of the hull with a sparse convex-combination certificate.

    ``support`` pairs vertex indices with strictly positive weights that
    sum to one; the weighted vertex sum reconstructs ``mu``.
    """

    mu: np.ndarray
    support: Tuple[Tuple[int, float], ...]

    def validate(self, family: StructureFamily, tol: float = 1e-9) -> None:
        weights = np.array([w for _, w in self.support])
        if weights.size == 0 or weights.min() <= 0.0:
            raise ValueError("support weights must be strictly positive")
        if abs(weights.sum() - 1.0) > tol:
            raise ValueError(f"support weights sum to {weights.sum()}, not 1")
        recon = weights @ family.vertices[[i for i, _ in self.support]]
        err = np.abs(recon - self.mu).max()
        if err > tol:
            raise ValueError(f"support does not reconstruct mu (max error {err})")


@dataclass(frozen=True)
class VertexDistribution:
    """Probabilities over the enumerated vertices of one family."""

    probs: np.ndarray

    def validate(self, tol: float = 1e-9) -> None:
        if self.probs.min() < 0.0:
            raise ValueError("negative probability")
        if abs(self.probs.sum() - 1.0) > tol:
            raise ValueError(f"probabilities sum to {self.probs.sum()}")


def _as_scores(family: StructureFamily, s: np.ndarray) -> np.ndarray:
    s = np.ascontiguousarray(s, dtype=np.float64)
    if s.shape != (family.K,):
        raise ValueError(f"expected score vector of shape ({family.K},), got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s


def enumerate_vertices(family: StructureFamily) -> np.ndarray:
    """The materialized vertex list, one row per structure."""
    return family.vertices


def map_decode(family: StructureFamily, s: np.ndarray) -> np.ndarray:
    """Highest-scoring vertex; ties go to the lowest vertex index."""
    return family.vertices[map_decode_index(family, s)].copy()


def map_decode_index(family: StructureFamily, s: np.ndarray) -> int:
    s = _as_scores(family, s)
    return int(np.argmax(family.vertices @ s))


def softmax(s: np.ndarray) -> np.ndarray:
    """Stable softmax with max-subtraction; strictly positive, sums to 1."""
    s = np.ascontiguousarray(s, dtype=np.float64)
    w = np.exp(s - s.max())
    return w / w.sum()


def gibbs_marginals(family: StructureFamily, s: np.ndarray) -> Tuple[VertexDistribution, MeanPoint]:
    """Gibbs distribution p(z) proportional to exp(s'z) and its mean.

    The mean point's support lists every vertex whose probability stays
    above the floating-point floor (extreme scores underflow the rest to
    exactly zero, and zero weights are not certified).
    """
    s = _as_scores(family, s)
    t = family.vertices @ s
    w = np.exp(t - t.max())
    p = w / w.sum()
    mu = p @ family.vertices
    support = tuple((int(i), float(p[i])) for i in np.nonzero(p > 0.0)[0])
    return VertexDistribution(p), MeanPoint(mu, support)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("input must be finite")
    return simplex_project(v)


def _affine_least_squares(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Minimize ||q @ A - v|| subject to sum(q) = 1, q unconstrained in sign."""
    m = A.shape[0]
    if m == 1:
        return np.ones(1)
    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = A @ A.T
    kkt[:m, m] = 1.0
    kkt[m, :m] = 1.0
    rhs = np.concatenate([A @ v, [1.0]])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:m]


def project_polytope(
    family: StructureFamily,
    v: np.ndarray,
    *,
    gap_tol: float = 1e-12,
    max_iter: int | None = None,
) -> MeanPoint:
    """Euclidean projection onto the convex hull of the family's vertices.

    Active-set search: keep a working support, solve the equality
    constrained least-squares over its affine hull, add the vertex that
    most violates optimality (a highest-scoring-vertex call on the
    negative gradient), and drop vertices whose weight crosses zero.
    Terminates when no vertex can improve the objective by more than
    ``gap_tol`` (scaled by the gradient norm).
    """
    v = _as_scores(family, v)
    M = family.vertices
    n = M.shape[0]
    cap = 10 * n if max_iter is None else max_iter

    support = [int(np.argmax(M @ v))]
    weights = np.ones(1)
    mu = M[support[0]].copy()
    converged = False

    for _ in range(cap):
        grad = mu - v
        scores = M @ (-grad)
        best = int(np.argmax(scores))
        gap = scores[best] + grad @ mu
        if gap <= gap_tol * max(1.0, float(np.linalg.norm(grad))):
            converged = True
            break
        if best not in support:
            support.append(best)
            weights = np.append(weights, 0.0)
        # restore an affine-optimal feasible weighting over the support;
        # every pass either finishes or drops at least one vertex
        for _ in range(len(support) + 2):
            q = _affine_least_squares(M[support], v)
            if q.min() > 0.0:
                weights = q
                break
            step = q - weights
            shrink = step < 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                limits = np.where(shrink, weights / -step, np.inf)
            theta = min(1.0, float(limits.min()))
            weights = weights + theta * step
            weights[weights < 1e-14] = 0.0
            keep = weights > 0.0
            if keep.all():
                weights = weights / weights.sum()
                continue
            support = [support[i] for i in range(len(support)) if keep[i]]
            weights = weights[keep]
            weights = weights / weights.sum()
        mu = weights @ M[support]

    if not converged:
        raise NoConvergence(f"active set did not converge within {cap} iterations")

    keep = weights > 1e-12
    support = [support[i] for i in range(len(support)) if keep[i]]
    weights = weights[keep]
    weights = weights / weights.sum()
    mu = weights @ M[support]
    order = np.argsort(support)
    pairs = tuple((int(support[i]), float(weights[i])) for i in order)
    return MeanPoint(mu, pairs)


def sparsemap(family: StructureFamily, s: np.ndarray) -> MeanPoint:
    """Euclidean projection of the score vector onto the hull.

    Maximizing s'mu - ||mu||^2 / 2 over the hull and projecting s onto it
    are the same problem after completing the square, so this delegates
    to :func:`project_polytope`.
    """
    return project_polytope(family, s)
