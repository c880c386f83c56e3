"""Halfspace-represented polytopes and the small algebra the tube needs.

A polytope is ``{x : F x <= g}`` with unit-norm rows.  Support functions and
emptiness checks run linear programs (HiGHS); in one and two dimensions the
vertices are enumerated exactly, which gives fast exact support values for
the bounded sets used by the tube machinery and exact polygon Minkowski
sums for the invariant-set approximation.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .errors import EmptySet, Unbounded

ROW_TOL = 1e-12


class Polytope:
    """{x : f_mat x <= g_vec} with rows normalized to unit norm."""

    def __init__(self, f_mat, g_vec, normalize: bool = True):
        f_mat = np.atleast_2d(np.asarray(f_mat, dtype=float))
        g_vec = np.asarray(g_vec, dtype=float).reshape(f_mat.shape[0])
        if normalize:
            norms = np.linalg.norm(f_mat, axis=1)
            if np.any(norms < ROW_TOL):
                raise ValueError("zero facet normal")
            f_mat = f_mat / norms[:, None]
            g_vec = g_vec / norms
        self.f_mat = f_mat
        self.g_vec = g_vec

    @property
    def dim(self) -> int:
        return self.f_mat.shape[1]

    @property
    def n_facets(self) -> int:
        return self.f_mat.shape[0]

    def __repr__(self):
        return f"Polytope({self.n_facets} facets, dim {self.dim})"

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        return bool((self.f_mat @ x - self.g_vec <= tol).all())

    def contains_strictly(self, x, margin: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        return bool((self.f_mat @ x - self.g_vec < -margin).all())

    def is_empty(self, tol: float = 1e-9) -> bool:
        res = linprog(np.zeros(self.dim), A_ub=self.f_mat, b_ub=self.g_vec + tol,
                      bounds=[(None, None)] * self.dim, method="highs")
        return res.status == 2

    def chebyshev_center(self):
        """(center, radius) of the largest inscribed ball; radius < 0 ~ empty."""
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        a_ub = np.hstack([self.f_mat, np.ones((self.n_facets, 1))])
        res = linprog(c, A_ub=a_ub, b_ub=self.g_vec,
                      bounds=[(None, None)] * self.dim + [(None, None)],
                      method="highs")
        if res.status != 0:
            raise EmptySet("Chebyshev-center program failed; set likely empty")
        return res.x[:-1], float(res.x[-1])

    def support(self, direction) -> float:
        """max_x direction . x over the polytope, by linear program."""
        direction = np.asarray(direction, dtype=float).reshape(self.dim)
        res = linprog(-direction, A_ub=self.f_mat, b_ub=self.g_vec,
                      bounds=[(None, None)] * self.dim, method="highs")
        if res.status == 2:
            raise EmptySet("support function of an empty polytope")
        if res.status == 3:
            raise Unbounded("polytope unbounded in the requested direction")
        if res.status != 0:
            raise Unbounded(f"support LP failed with status {res.status}")
        return float(direction @ res.x)

    def vertices(self) -> np.ndarray:
        """Exact vertex enumeration in one or two dimensions."""
        if self.dim == 1:
            f = self.f_mat[:, 0]
            upper = self.g_vec[f > 0] / f[f > 0]
            lower = self.g_vec[f < 0] / f[f < 0]
            if upper.size == 0 or lower.size == 0:
                raise Unbounded("interval is unbounded")
            lo, hi = float(lower.max()), float(upper.min())
            if lo > hi + 1e-12:
                raise EmptySet("empty interval")
            return np.array([[lo], [hi]])
        if self.dim != 2:
            raise NotImplementedError("vertex enumeration only in 1-D and 2-D")
        pts = []
        q = self.n_facets
        for i in range(q):
            for j in range(i + 1, q):
                mat = self.f_mat[[i, j]]
                if abs(np.linalg.det(mat)) < 1e-12:
                    continue
                x = np.linalg.solve(mat, self.g_vec[[i, j]])
                if (self.f_mat @ x - self.g_vec <= 1e-9 * (1.0 + np.abs(self.g_vec))).all():
                    pts.append(x)
        if not pts:
            raise EmptySet("no vertices: empty or unbounded set")
        pts = np.array(pts)
        # dedupe and order counter-clockwise
        keep = []
        for p in pts:
            if not any(np.linalg.norm(p - pts[k]) < 1e-10 for k in keep):
                keep.append(int(np.where((pts == p).all(axis=1))[0][0]))
        pts = pts[sorted(set(keep))]
        center = pts.mean(axis=0)
        order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
        return pts[order]

    def scale(self, factor: float) -> "Polytope":
        """factor * P for factor > 0 (scaling about the origin)."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return Polytope(self.f_mat, factor * self.g_vec, normalize=False)

    def translate(self, shift) -> "Polytope":
        shift = np.asarray(shift, dtype=float).reshape(self.dim)
        return Polytope(self.f_mat, self.g_vec + self.f_mat @ shift, normalize=False)

    def intersect(self, other: "Polytope") -> "Polytope":
        return Polytope(np.vstack([self.f_mat, other.f_mat]),
                        np.concatenate([self.g_vec, other.g_vec]), normalize=False)

    def prune(self, tol: float = 1e-9) -> "Polytope":
        """Drop redundant facets, one linear program per facet."""
        keep = np.ones(self.n_facets, dtype=bool)
        for i in range(self.n_facets):
            mask = keep.copy()
            mask[i] = False
            if not mask.any():
                continue
            res = linprog(-self.f_mat[i], A_ub=self.f_mat[mask], b_ub=self.g_vec[mask],
                          bounds=[(None, None)] * self.dim, method="highs")
            if res.status == 0 and -res.fun <= self.g_vec[i] + tol:
                keep[i] = False
        if keep.all():
            return self
        return Polytope(self.f_mat[keep], self.g_vec[keep], normalize=False)

    # -- plain-text serialization: one facet per line, normal then offset

    def to_text(self) -> str:
        lines = [" ".join(repr(float(v)) for v in np.append(self.f_mat[i], self.g_vec[i]))
                 for i in range(self.n_facets)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Polytope":
        rows = []
        for line in text.splitlines():
            body = line.split("#", 1)[0].strip()
            if body:
                rows.append([float(tok) for tok in body.split()])
        if not rows:
            raise ValueError("no facets in polytope text")
        arr = np.array(rows)
        return cls(arr[:, :-1], arr[:, -1], normalize=False)


def box(lower, upper) -> Polytope:
    """Axis-aligned box {x : lower <= x <= upper}."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    n = lower.size
    eye = np.eye(n)
    return Polytope(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))


def regular_polygon(n_sides: int, circumradius: float, phase: float = 0.0) -> Polytope:
    """Regular polygon with a vertex at angle ``phase``."""
    angles = phase + 2.0 * np.pi * np.arange(n_sides) / n_sides
    verts = circumradius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return polytope_from_vertices(verts)


def polytope_from_vertices(verts: np.ndarray) -> Polytope:
    """Halfspace representation of the convex hull of 2-D points."""
    verts = np.asarray(verts, dtype=float)
    if verts.shape[1] != 2:
        raise NotImplementedError("vertex conversion only in 2-D")
    hull = _convex_hull_2d(verts)
    rows, offs = [], []
    k = hull.shape[0]
    for i in range(k):
        p, q = hull[i], hull[(i + 1) % k]
        edge = q - p
        normal = np.array([edge[1], -edge[0]])   # outward for ccw ordering
        norm = np.linalg.norm(normal)
        if norm < 1e-14:
            continue
        rows.append(normal / norm)
        offs.append(float(normal @ p) / norm)
    return Polytope(np.array(rows), np.array(offs), normalize=False)


def _convex_hull_2d(pts: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, counter-clockwise without repetition."""
    pts = np.unique(np.round(np.asarray(pts, dtype=float), 14), axis=0)
    if pts.shape[0] < 3:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def half(points):
        chain = []
        for p in points:
            while len(chain) >= 2:
                u = chain[-1] - chain[-2]
                v = p - chain[-2]
                if u[0] * v[1] - u[1] * v[0] <= 1e-16:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def support_from_vertices(verts: np.ndarray, direction) -> float:
    """Exact support value of conv(verts) in a direction."""
    return float(np.max(np.asarray(verts) @ np.asarray(direction, dtype=float)))


def minkowski_sum_vertices(va: np.ndarray, vb: np.ndarray) -> np.ndarray:
    """Vertices of the Minkowski sum of two convex 2-D vertex sets."""
    va = np.atleast_2d(va)
    vb = np.atleast_2d(vb)
    sums = (va[:, None, :] + vb[None, :, :]).reshape(-1, va.shape[1])
    if va.shape[1] == 1:
        return np.array([[sums.min()], [sums.max()]])
    return _convex_hull_2d(sums)


def polygon_area(verts: np.ndarray) -> float:
    """Shoelace area of a ccw-ordered polygon (1-D sets return length)."""
    verts = np.atleast_2d(verts)
    if verts.shape[1] == 1:
        return float(verts.max() - verts.min())
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))
