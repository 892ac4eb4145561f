"""Univariate and tensor-product B-spline bases on [0, 1].

Open (clamped) knot vectors, Cox-de Boor evaluation with derivatives,
Greville abscissae, global h-refinement with exact prolongation, and the
lexicographic (xi-major) tensor-product numbering that every other module
relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import DomainError, InputError

KNOT_TOL = 1e-12


def gauss_legendre(n: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _group_knots(knots):
    """Distinct knot values and their multiplicities."""
    breaks = [knots[0]]
    mult = [1]
    for v in knots[1:]:
        if v - breaks[-1] <= KNOT_TOL:
            mult[-1] += 1
        else:
            breaks.append(v)
            mult.append(1)
    return np.asarray(breaks, dtype=float), np.asarray(mult, dtype=int)


def _ders_basis(t, p, span, x, n):
    """Values and first ``n`` derivatives of the p+1 basis functions active
    on knot span ``span`` at ``x`` (the A2.3 triangular-table recursion)."""
    ndu = np.empty((p + 1, p + 1))
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - t[span + 1 - j]
        right[j] = t[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    ders = np.zeros((n + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.empty((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, n + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, n + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


class KnotVector:
    """Open (clamped) knot vector of a given degree with knots in [0, 1].

    Endpoint knots must appear with multiplicity exactly degree+1; interior
    multiplicities may go up to the degree (a degree-fold repetition gives a
    C0 break). Instances are immutable.
    """

    def __init__(self, degree, knots):
        degree = int(degree)
        if degree < 1:
            raise InputError(f"degree must be >= 1, got {degree}")
        knots = np.array(knots, dtype=float)
        if knots.ndim != 1 or len(knots) < 2 * (degree + 1):
            raise InputError("knot sequence too short for the degree")
        if np.any(np.diff(knots) < 0):
            raise InputError("knots must be nondecreasing")
        if abs(knots[0]) > KNOT_TOL or abs(knots[-1] - 1.0) > KNOT_TOL:
            raise InputError("knots must be normalized to [0, 1]")
        breaks, mult = _group_knots(knots)
        if mult[0] != degree + 1 or mult[-1] != degree + 1:
            raise InputError(
                "knot vector must be open: end multiplicities exactly degree+1")
        if len(mult) > 2 and mult[1:-1].max() > degree:
            raise InputError("interior knot multiplicity exceeds the degree")
        if len(breaks) < 2:
            raise InputError("need at least one span of positive length")
        self.degree = degree
        self.knots = knots
        self.breakpoints = breaks
        self.multiplicities = mult
        knots.setflags(write=False)
        breaks.setflags(write=False)
        mult.setflags(write=False)

    @property
    def dim(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def nelems(self) -> int:
        return len(self.breakpoints) - 1

    def __eq__(self, other):
        return (isinstance(other, KnotVector)
                and self.degree == other.degree
                and len(self.knots) == len(other.knots)
                and np.allclose(self.knots, other.knots, atol=KNOT_TOL, rtol=0.0))

    def __hash__(self):
        return hash((self.degree, len(self.knots), float(self.knots.sum())))

    def __repr__(self):
        return f"KnotVector(p={self.degree}, nelems={self.nelems}, dim={self.dim})"

    def flipped(self) -> "KnotVector":
        """Knot vector of the same basis traversed in reverse parameter."""
        return KnotVector(self.degree, np.sort(1.0 - self.knots))

    def span_offsets(self):
        """Knot-span index of each nonempty element."""
        return np.cumsum(self.multiplicities)[:-1] - 1

    def find_span(self, x: float) -> int:
        k = int(np.searchsorted(self.knots, x, side="right")) - 1
        return min(max(k, self.degree), self.dim - 1)

    def eval(self, x: float, nderiv: int = 0):
        """Nonzero basis values and derivatives at ``x``.

        Returns ``(first, table)``: ``table[k, j]`` holds the k-th derivative
        of basis function ``first + j``, j = 0..degree.
        """
        x = float(x)
        if not 0.0 <= x <= 1.0:
            raise DomainError(f"evaluation point {x} outside [0, 1]")
        if not 0 <= nderiv <= self.degree:
            raise InputError(f"derivative order {nderiv} not in [0, {self.degree}]")
        span = self.find_span(x)
        return span - self.degree, _ders_basis(self.knots, self.degree, span, x, nderiv)

    def eval_padded(self, x: float, nderiv: int):
        """Like :meth:`eval` but zero-pads derivative orders above the degree."""
        first, tab = self.eval(x, min(nderiv, self.degree))
        if nderiv > self.degree:
            pad = np.zeros((nderiv + 1, self.degree + 1))
            pad[: self.degree + 1] = tab
            tab = pad
        return first, tab

    @cached_property
    def greville(self):
        """Knot averages; one abscissa per basis function."""
        p = self.degree
        g = np.array([self.knots[i + 1: i + p + 1].mean() for i in range(self.dim)])
        return np.clip(g, 0.0, 1.0)

    def max_interior_multiplicity(self) -> int:
        if len(self.multiplicities) <= 2:
            return 0
        return int(self.multiplicities[1:-1].max())

    def _insert(self, xbar: float):
        """Insert a single new knot value; returns (KnotVector, prolongation)."""
        t, p, n = self.knots, self.degree, self.dim
        k = self.find_span(xbar)
        rows, cols, vals = [], [], []
        for i in range(n + 1):
            if i <= k - p:
                alpha = 1.0
            elif i >= k + 1:
                alpha = 0.0
            else:
                alpha = (xbar - t[i]) / (t[i + p] - t[i])
            if alpha != 0.0:
                rows.append(i)
                cols.append(i)
                vals.append(alpha)
            if alpha != 1.0:
                rows.append(i)
                cols.append(i - 1)
                vals.append(1.0 - alpha)
        P = sparse.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))
        return KnotVector(p, np.insert(t, k + 1, xbar)), P

    def refine(self):
        """Bisect every nonempty span.

        Returns the refined knot vector and the sparse prolongation matrix
        mapping coarse to fine coefficients exactly.
        """
        mids = 0.5 * (self.breakpoints[:-1] + self.breakpoints[1:])
        kv = self
        P = sparse.identity(self.dim, format="csr")
        for x in mids:
            kv, Pk = kv._insert(x)
            P = Pk @ P
        return kv, P.tocsr()

    def collocation(self, pts, nderiv: int = 0):
        """Dense collocation matrices: one (len(pts), dim) array per
        derivative order 0..nderiv."""
        pts = np.asarray(pts, dtype=float)
        out = [np.zeros((len(pts), self.dim)) for _ in range(nderiv + 1)]
        for i, x in enumerate(pts):
            first, tab = self.eval_padded(x, nderiv)
            for k in range(nderiv + 1):
                out[k][i, first: first + self.degree + 1] = tab[k]
        return out

    def interpolate(self, data):
        """Spline coefficients interpolating ``data`` at the Greville abscissae.

        ``data`` is either an array of length dim (scalar or vector values) or
        a callable evaluated at each abscissa.
        """
        g = self.greville
        if callable(data):
            y = np.array([data(t) for t in g], dtype=float)
        else:
            y = np.asarray(data, dtype=float)
            if len(y) != self.dim:
                raise InputError("interpolation data length mismatch")
        A = self.collocation(g)[0]
        return np.linalg.solve(A, y)


def uniform_knots(degree: int, nelems: int, c0_breaks=()) -> KnotVector:
    """Uniform open knot vector, optionally with degree-fold (C0) repetitions
    at the given breakpoints."""
    if nelems < 1:
        raise InputError("need at least one element")
    breaks = np.linspace(0.0, 1.0, nelems + 1)
    knots = [0.0] * (degree + 1)
    for b in breaks[1:-1]:
        rep = degree if any(abs(b - c) <= KNOT_TOL for c in c0_breaks) else 1
        knots.extend([b] * rep)
    knots.extend([1.0] * (degree + 1))
    return KnotVector(degree, knots)


@dataclass
class TensorEval:
    """Active indices and basis values/derivatives at one parametric point."""
    active: np.ndarray
    w: np.ndarray
    w_xi: np.ndarray
    w_eta: np.ndarray
    w_xixi: np.ndarray | None = None
    w_xieta: np.ndarray | None = None
    w_etaeta: np.ndarray | None = None


class TensorBasis:
    """Tensor product of two knot vectors with xi-major flat numbering:
    flat index i = i_xi * n_eta + i_eta."""

    def __init__(self, kv_xi: KnotVector, kv_eta: KnotVector):
        self.kv_xi = kv_xi
        self.kv_eta = kv_eta

    @property
    def n_xi(self):
        return self.kv_xi.dim

    @property
    def n_eta(self):
        return self.kv_eta.dim

    @property
    def dim(self):
        return self.n_xi * self.n_eta

    def __repr__(self):
        return f"TensorBasis({self.kv_xi!r} x {self.kv_eta!r})"

    def flat(self, i_xi, i_eta):
        return i_xi * self.n_eta + i_eta

    @cached_property
    def boundary_indices(self):
        """Flat indices of basis functions not vanishing on the boundary of
        the unit square."""
        ix, iy = np.meshgrid(np.arange(self.n_xi), np.arange(self.n_eta),
                             indexing="ij")
        mask = (ix == 0) | (ix == self.n_xi - 1) | (iy == 0) | (iy == self.n_eta - 1)
        return np.flatnonzero(mask.ravel())

    @cached_property
    def inner_indices(self):
        mask = np.ones(self.dim, dtype=bool)
        mask[self.boundary_indices] = False
        return np.flatnonzero(mask)

    def face_indices(self, face: str):
        """Flat indices along a face, ordered by the running parameter."""
        if face == "west":
            return np.arange(self.n_eta)
        if face == "east":
            return (self.n_xi - 1) * self.n_eta + np.arange(self.n_eta)
        if face == "south":
            return np.arange(self.n_xi) * self.n_eta
        if face == "north":
            return np.arange(self.n_xi) * self.n_eta + (self.n_eta - 1)
        raise InputError(f"unknown face {face!r}")

    def face_knotvector(self, face: str) -> KnotVector:
        return self.kv_eta if face in ("west", "east") else self.kv_xi

    def greville_grid(self):
        """(dim, 2) array of tensor Greville points in flat ordering."""
        gx = self.kv_xi.greville
        gy = self.kv_eta.greville
        out = np.empty((self.dim, 2))
        out[:, 0] = np.repeat(gx, self.n_eta)
        out[:, 1] = np.tile(gy, self.n_xi)
        return out

    def refine(self):
        """Globally h-refine both directions; returns (fine basis, prolongation)."""
        kx, Px = self.kv_xi.refine()
        ky, Py = self.kv_eta.refine()
        return TensorBasis(kx, ky), sparse.kron(Px, Py).tocsr()

    def eval(self, xi: float, eta: float, max_deriv: int = 1) -> TensorEval:
        """Active basis values at (xi, eta) with derivatives up to
        ``max_deriv`` (second derivatives only when requested)."""
        nd = min(max_deriv, 2)
        fx, tx = self.kv_xi.eval_padded(xi, nd)
        fy, ty = self.kv_eta.eval_padded(eta, nd)
        px, py = self.kv_xi.degree, self.kv_eta.degree
        ax = fx + np.arange(px + 1)
        ay = fy + np.arange(py + 1)
        active = (ax[:, None] * self.n_eta + ay[None, :]).ravel()
        out = TensorEval(
            active=active,
            w=np.outer(tx[0], ty[0]).ravel(),
            w_xi=np.outer(tx[1], ty[0]).ravel() if nd >= 1 else None,
            w_eta=np.outer(tx[0], ty[1]).ravel() if nd >= 1 else None,
        )
        if nd >= 2:
            out.w_xixi = np.outer(tx[2], ty[0]).ravel()
            out.w_xieta = np.outer(tx[1], ty[1]).ravel()
            out.w_etaeta = np.outer(tx[0], ty[2]).ravel()
        return out


# Spec-level operation aliases -------------------------------------------------

def eval_univariate(kv: KnotVector, x: float, max_deriv: int = 0):
    """Values and derivatives of the nonzero basis functions at ``x``."""
    return kv.eval(x, max_deriv)


def greville(kv: KnotVector):
    return kv.greville


def h_refine(kv):
    """Global h-refinement of a KnotVector or TensorBasis."""
    return kv.refine()


def tensor_eval(tb: TensorBasis, xi: float, eta: float, max_deriv: int = 1):
    return tb.eval(xi, eta, max_deriv)
