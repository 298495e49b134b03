"""Norms on R^N with polar duality, subgradients, Wulff shapes and smoothing.

An anisotropy F is an even, convex, positively 1-homogeneous, coercive
function, i.e. a norm. Supported families:

- ``euclidean``: F(xi) = |xi|
- ``ell``: F(xi) = ||xi||_q for q in [1, inf]
- ``well``: F(xi) = ||diag(w) xi||_q with positive weights
- ``poly``: F(xi) = max_i a_i . xi over an even generator set
  {+-a_1, ..., +-a_m}, i.e. the support function of conv(A). This is the
  crystalline case: the unit ball of the dual norm is a polytope.

The polar norm is F0(x) = sup {x.xi : F(xi) <= 1}; the Wulff shape of
radius r is W_r = {F0 < r}. Crystalline norms get an exact generator-based
evaluation, exact subgradients, and a one-sided log-sum-exp smoothing
F_delta >= F used by the energy minimizer.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

__all__ = [
    "Anisotropy",
    "euclidean",
    "ell",
    "weighted_ell",
    "polytope",
    "parse_anisotropy",
    "dual_oracle",
]

_GEN_TOL = 1e-12


class AnisotropyError(ValueError):
    """Invalid anisotropy descriptor or argument."""


def _as_vec(xi, dim):
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (dim,):
        raise AnisotropyError(f"expected a {dim}-vector, got shape {xi.shape}")
    if not np.all(np.isfinite(xi)):
        raise AnisotropyError("non-finite input vector")
    return xi


def _symmetrize(gens):
    """Close a generator list under negation and drop duplicates."""
    gens = np.asarray(gens, dtype=float)
    if gens.ndim != 2:
        raise AnisotropyError("generators must be a list of vectors")
    full = np.vstack([gens, -gens])
    full = full + 0.0  # normalize -0.0
    # dedupe by rounded key; generators are user-scale numbers
    keys = {}
    keep = []
    for i, g in enumerate(full):
        k = tuple(np.round(g, 12))
        if k not in keys:
            keys[k] = True
            keep.append(i)
    return full[keep]


def _convex_hull_2d(points):
    """Monotone-chain hull, CCW order, no duplicated endpoint."""
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.asarray(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1])


def _facet_normals_2d(gens):
    """Outward facet functionals f_j of conv(gens) with f_j . v = 1 on the facet.

    The gauge of conv(gens) is then max_j f_j . x, which is the polar norm
    of the support function of the generator set.
    """
    hull = _convex_hull_2d(gens)
    m = len(hull)
    normals = []
    for j in range(m):
        v, w = hull[j], hull[(j + 1) % m]
        mat = np.array([[v[0], v[1]], [w[0], w[1]]])
        normals.append(np.linalg.solve(mat, np.ones(2)))
    return np.asarray(normals)


class Anisotropy:
    """Immutable norm descriptor with exact and smoothed evaluation.

    Parameters
    ----------
    kind : one of 'euclidean', 'ell', 'well', 'poly'
    dim : ambient dimension N >= 2
    q : exponent for 'ell'/'well' (math.inf allowed)
    weights : positive weights for 'well'
    generators : even generator set for 'poly' (auto-symmetrized)
    smoothing_delta : log-sum-exp temperature for crystalline kinds (0 = exact)
    huber_eta : near-origin regularization scale consumed by F^p energies
    """

    def __init__(self, kind, dim=2, q=None, weights=None, generators=None,
                 smoothing_delta=0.0, huber_eta=0.0):
        if dim < 2:
            raise AnisotropyError("dim must be >= 2")
        if smoothing_delta < 0 or huber_eta < 0:
            raise AnisotropyError("smoothing_delta and huber_eta must be nonnegative")
        self.kind = kind
        self.dim = int(dim)
        self.smoothing_delta = float(smoothing_delta)
        self.huber_eta = float(huber_eta)
        self.q = None
        self.weights = None
        self.generators = None
        self._facets = None
        self._equiv = None

        if kind == "euclidean":
            pass
        elif kind == "ell":
            self.q = self._check_q(q)
            self.generators = self._canonical_generators(self.q, np.ones(self.dim))
        elif kind == "well":
            self.q = self._check_q(q)
            w = np.asarray(weights, dtype=float)
            if w.shape != (self.dim,) or np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise AnisotropyError("weights must be positive finite, one per axis")
            self.weights = w
            self.weights.flags.writeable = False
            self.generators = self._canonical_generators(self.q, w)
        elif kind == "poly":
            if generators is None:
                raise AnisotropyError("poly kind requires generators")
            gens = _symmetrize(generators)
            if gens.shape[1] != self.dim:
                raise AnisotropyError("generator dimension mismatch")
            if np.linalg.matrix_rank(gens) < self.dim:
                raise AnisotropyError("generators do not span R^N; norm would be degenerate")
            self.generators = gens
        else:
            raise AnisotropyError(f"unknown anisotropy kind {kind!r}")

        if self.generators is not None:
            self.generators = np.ascontiguousarray(self.generators)
            self.generators.flags.writeable = False
            if self.dim == 2:
                self._facets = _facet_normals_2d(self.generators)
                self._facets.flags.writeable = False

    @staticmethod
    def _check_q(q):
        if q is None:
            raise AnisotropyError("ell kind requires an exponent q")
        q = float(q)
        if not (q >= 1.0):
            raise AnisotropyError("exponent q must satisfy q >= 1")
        return q

    def _canonical_generators(self, q, w):
        """Even generator sets realizing the crystalline ell-1 / ell-inf norms."""
        if q == 1.0:
            if self.dim > 16:
                return None
            signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * self.dim))).T.reshape(-1, self.dim)
            return _symmetrize(signs * w)
        if q == math.inf:
            return _symmetrize(np.diag(w))
        return None

    # -- basic queries ------------------------------------------------------

    @property
    def is_crystalline(self):
        return self.generators is not None

    def with_smoothing(self, smoothing_delta=None, huber_eta=None):
        """Copy with new regularization scales (values are immutable)."""
        return Anisotropy(
            self.kind, self.dim, q=self.q, weights=self.weights,
            generators=None if self.kind != "poly" else self.generators,
            smoothing_delta=self.smoothing_delta if smoothing_delta is None else smoothing_delta,
            huber_eta=self.huber_eta if huber_eta is None else huber_eta,
        )

    # -- exact evaluation ----------------------------------------------------

    def eval(self, xi):
        """F(xi), exactly for the descriptor."""
        xi = _as_vec(xi, self.dim)
        return float(self._eval_cols(xi[:, None])[0])

    def eval_dual(self, x):
        """Polar norm F0(x) in closed form per kind."""
        x = _as_vec(x, self.dim)
        return float(self._eval_dual_cols(x[:, None])[0])

    def _eval_cols(self, X):
        """F over column vectors, shape (dim, n) -> (n,)."""
        if self.kind == "euclidean":
            return np.sqrt(np.sum(X * X, axis=0))
        if self.kind == "poly" or (self.kind in ("ell", "well") and self.generators is not None):
            return np.max(self.generators @ X, axis=0)
        W = self.weights if self.kind == "well" else None
        Y = X if W is None else W[:, None] * X
        q = self.q
        if q == math.inf:
            return np.max(np.abs(Y), axis=0)
        if q == 1.0:
            return np.sum(np.abs(Y), axis=0)
        return np.sum(np.abs(Y) ** q, axis=0) ** (1.0 / q)

    def _eval_dual_cols(self, X):
        """F0 over column vectors, shape (dim, n) -> (n,)."""
        if self.kind == "euclidean":
            return np.sqrt(np.sum(X * X, axis=0))
        if self.kind == "poly":
            if self._facets is not None:
                return np.max(self._facets @ X, axis=0)
            return np.array([self._dual_lp(x) for x in X.T])
        W = self.weights if self.kind == "well" else None
        Y = X if W is None else X / W[:, None]
        qd = self.dual_exponent()
        if qd == math.inf:
            return np.max(np.abs(Y), axis=0)
        if qd == 1.0:
            return np.sum(np.abs(Y), axis=0)
        return np.sum(np.abs(Y) ** qd, axis=0) ** (1.0 / qd)

    def dual_exponent(self):
        if self.q is None:
            return None
        if self.q == 1.0:
            return math.inf
        if self.q == math.inf:
            return 1.0
        return self.q / (self.q - 1.0)

    def _dual_lp(self, x):
        # gauge of conv(generators): min sum(mu) s.t. gens^T mu = x, mu >= 0
        from scipy.optimize import linprog

        A = self.generators
        res = linprog(np.ones(len(A)), A_eq=A.T, b_eq=x,
                      bounds=[(0, None)] * len(A), method="highs")
        if not res.success:
            raise AnisotropyError(f"dual gauge LP failed: {res.message}")
        return float(res.fun)

    def dual_anisotropy(self):
        """The polar norm as an Anisotropy (closed-form kinds and 2-D polytopes)."""
        if self.kind == "euclidean":
            return Anisotropy("euclidean", self.dim)
        if self.kind == "ell":
            return Anisotropy("ell", self.dim, q=self.dual_exponent())
        if self.kind == "well":
            return Anisotropy("well", self.dim, q=self.dual_exponent(),
                              weights=1.0 / self.weights)
        if self._facets is not None:
            return Anisotropy("poly", self.dim, generators=self._facets)
        raise AnisotropyError("no closed-form dual for polytopes with N > 2")

    # -- subgradients and smoothing ------------------------------------------

    def subgradient(self, xi):
        """An element z of the subdifferential of F at xi.

        Satisfies F0(z) <= 1 and z . xi = F(xi); returns 0 at the origin.
        At kinks the average of the active generators (or the sign vector)
        is selected.
        """
        xi = _as_vec(xi, self.dim)
        if np.all(xi == 0.0):
            return np.zeros(self.dim)
        if self.kind == "euclidean":
            return xi / np.linalg.norm(xi)
        if self.generators is not None:
            vals = self.generators @ xi
            fval = np.max(vals)
            active = vals >= fval - _GEN_TOL * (1.0 + abs(fval))
            return self.generators[active].mean(axis=0)
        W = self.weights if self.kind == "well" else np.ones(self.dim)
        y = W * xi
        q = self.q
        if q == math.inf:
            fval = np.max(np.abs(y))
            active = np.abs(y) >= fval - _GEN_TOL * (1.0 + fval)
            z = np.where(active, np.sign(y), 0.0)
            return W * z / np.count_nonzero(active)
        if q == 1.0:
            return W * np.sign(y)
        fval = np.sum(np.abs(y) ** q) ** (1.0 / q)
        return W * np.sign(y) * np.abs(y) ** (q - 1.0) / fval ** (q - 1.0)

    def smooth_eval_grad(self, xi):
        """Smoothed value and exact gradient of the smoothed norm.

        Crystalline kinds with smoothing_delta > 0 use the overflow-guarded
        log-sum-exp F_delta = delta log sum_i exp(a_i . xi / delta), which
        sandwiches F <= F_delta <= F + delta log(2m). Other kinds return the
        closed-form value with the gradient taken to be 0 at the origin.
        """
        xi = _as_vec(xi, self.dim)
        if self.generators is not None and self.smoothing_delta > 0:
            v, g = self._lse_value_grad(xi[:, None])
            return float(v[0]), g[:, 0]
        if np.all(xi == 0.0):
            return 0.0, np.zeros(self.dim)
        return self._eval_cols(xi[:, None])[0], self.subgradient(xi)

    def _lse_value_grad(self, X):
        """Log-sum-exp value and gradient over columns, (dim, n) -> ((n,), (dim, n))."""
        d = self.smoothing_delta
        S = self.generators @ X
        m = np.max(S, axis=0)
        E = np.exp((S - m) / d)
        Z = np.sum(E, axis=0)
        val = m + d * np.log(Z)
        grad = self.generators.T @ (E / Z)
        return val, grad

    # -- Wulff shapes ----------------------------------------------------------

    def wulff_contains(self, x, center, r):
        """True iff x lies in the open Wulff shape W_r(center) = {F0(. - center) < r}."""
        if r <= 0:
            raise AnisotropyError("Wulff radius must be positive")
        x = _as_vec(x, self.dim)
        center = _as_vec(center, self.dim)
        return bool(self.eval_dual(x - center) < r)

    def wulff_polygon(self, center, r, n):
        """n boundary points of W_r(center), at equally spaced directions (N = 2)."""
        if self.dim != 2:
            raise AnisotropyError("wulff_polygon is 2-D only")
        if r <= 0:
            raise AnisotropyError("Wulff radius must be positive")
        if n < 4:
            raise AnisotropyError("need at least 4 directions")
        center = _as_vec(center, 2)
        th = 2.0 * np.pi * np.arange(n) / n
        D = np.vstack([np.cos(th), np.sin(th)])
        scale = r / self._eval_dual_cols(D)
        return (center[:, None] + D * scale).T

    # -- norm equivalence -----------------------------------------------------

    def equivalence_constants(self):
        """(c, C) with c |xi| <= F(xi) <= C |xi|, from directional sampling."""
        if self._equiv is None:
            if self.kind == "euclidean":
                self._equiv = (1.0, 1.0)
            elif self.dim == 2:
                n = 1440
                th = np.pi * np.arange(n) / n
                D = np.vstack([np.cos(th), np.sin(th)])
                vals = self._eval_cols(D)
                # widen by the angular sampling error (F is C-Lipschitz)
                half_step = np.pi / (2 * n)
                C = float(vals.max()) / (1.0 - half_step)
                c = max(float(vals.min()) - C * half_step, 1e-300)
                self._equiv = (c, C)
            else:
                rng = np.random.default_rng(20260809)
                D = rng.standard_normal((self.dim, 4096))
                D /= np.linalg.norm(D, axis=0)
                D = np.hstack([D, np.eye(self.dim)])
                if self.generators is not None:
                    G = self.generators.T / np.linalg.norm(self.generators.T, axis=0)
                    D = np.hstack([D, G])
                vals = self._eval_cols(D)
                self._equiv = (float(vals.min()), float(vals.max()))
        return self._equiv

    # -- solver support ---------------------------------------------------------

    def energy_terms(self, gx, gy, delta=None):
        """(F, Px, Py) on 2-D gradient arrays, with (Px, Py) = F grad F.

        Uses the log-sum-exp surrogate for crystalline kinds when the
        temperature is positive (delta overrides self.smoothing_delta and
        may be a per-cell array); the product F grad F is smooth at the
        origin for every kind (it is half the gradient of F^2).
        """
        if self.dim != 2:
            raise AnisotropyError("energy_terms is 2-D only")
        if delta is None:
            delta = self.smoothing_delta
        if self.kind == "euclidean" or (self.kind == "ell" and self.q == 2.0):
            F = np.hypot(gx, gy)
            return F, gx, gy
        if self.generators is not None:
            if np.any(np.asarray(delta) > 0):
                d = np.asarray(delta)[..., None] if np.ndim(delta) else delta
                A = self.generators
                S = gx[..., None] * A[:, 0] + gy[..., None] * A[:, 1]
                m = np.max(S, axis=-1)
                np.subtract(S, m[..., None], out=S)
                S /= d
                np.exp(S, out=S)
                Z = np.sum(S, axis=-1)
                F = m + np.asarray(delta) * np.log(Z)
                S /= Z[..., None]
                Px = F * (S @ A[:, 0])
                Py = F * (S @ A[:, 1])
                return F, Px, Py
            A = self.generators
            S = gx[..., None] * A[:, 0] + gy[..., None] * A[:, 1]
            k = np.argmax(S, axis=-1)
            F = np.take_along_axis(S, k[..., None], axis=-1)[..., 0]
            Px = F * A[k, 0]
            Py = F * A[k, 1]
            return F, Px, Py
        # smooth ell-q family, componentwise
        W = self.weights if self.kind == "well" else np.ones(2)
        yx, yy = W[0] * gx, W[1] * gy
        q = self.q
        Fq = (np.abs(yx) ** q + np.abs(yy) ** q) ** (1.0 / q)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(Fq > 0.0, Fq ** (2.0 - q), 0.0)
        Px = W[0] * np.sign(yx) * np.abs(yx) ** (q - 1.0) * scale
        Py = W[1] * np.sign(yy) * np.abs(yy) ** (q - 1.0) * scale
        return Fq, Px, Py

    def curvature_scale(self, gx, gy, delta=None):
        """Per-cell curvature magnitude of the smoothed norm (2-D arrays).

        For the log-sum-exp surrogate this is the softmax covariance trace
        over delta, which is large only in the kink layers where several
        generators are active; smooth kinds return zero, leaving the
        p-power weight as the only curvature source. delta may be an array
        to vary the temperature per cell.
        """
        if self.dim != 2:
            raise AnisotropyError("curvature_scale is 2-D only")
        if delta is None:
            delta = self.smoothing_delta
        if self.generators is None or np.all(np.asarray(delta) <= 0):
            return np.zeros(np.shape(gx))
        d = np.asarray(delta)[..., None] if np.ndim(delta) else delta
        A = self.generators
        S = gx[..., None] * A[:, 0] + gy[..., None] * A[:, 1]
        m = np.max(S, axis=-1)
        np.subtract(S, m[..., None], out=S)
        S /= d
        np.exp(S, out=S)
        S /= np.sum(S, axis=-1)[..., None]
        mx = S @ A[:, 0]
        my = S @ A[:, 1]
        var = S @ (A[:, 0] ** 2 + A[:, 1] ** 2) - mx * mx - my * my
        return np.maximum(var, 0.0) / np.asarray(delta)

    def dual_values(self, X, Y, center=(0.0, 0.0)):
        """F0(x - center) on coordinate arrays, 2-D, vectorized."""
        if self.dim != 2:
            raise AnisotropyError("dual_values is 2-D only")
        pts = np.vstack([np.ravel(X) - center[0], np.ravel(Y) - center[1]])
        return self._eval_dual_cols(pts).reshape(np.shape(X))

    # -- text syntax -------------------------------------------------------------

    def descriptor(self):
        """Canonical text form accepted by parse_anisotropy."""
        if self.kind == "euclidean":
            return "euclidean"
        if self.kind == "ell":
            return f"ell:{_format_q(self.q)}"
        if self.kind == "well":
            ws = ",".join(repr(float(w)) for w in self.weights)
            return f"well:{_format_q(self.q)}:{ws}"
        # emit one representative per +- pair
        seen, rows = set(), []
        for g in self.generators:
            key = tuple(np.round(g, 12))
            nkey = tuple(np.round(-g, 12))
            if nkey in seen:
                continue
            seen.add(key)
            rows.append(",".join(repr(float(c)) for c in g))
        return "poly:" + ";".join(rows)

    def __repr__(self):
        return f"Anisotropy({self.descriptor()!r}, dim={self.dim})"

    def __eq__(self, other):
        if not isinstance(other, Anisotropy):
            return NotImplemented
        return self.descriptor() == other.descriptor() and self.dim == other.dim

    def __hash__(self):
        return hash((self.descriptor(), self.dim))


def _format_q(q):
    if q == math.inf:
        return "inf"
    if q == int(q):
        return str(int(q))
    return repr(q)


def _parse_q(text):
    text = text.strip()
    if text == "inf":
        return math.inf
    try:
        if "/" in text:
            return float(Fraction(text))
        return float(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise AnisotropyError(f"bad exponent {text!r}") from exc


def parse_anisotropy(text, dim=2):
    """Parse the descriptor syntax.

    ``euclidean`` | ``ell:q`` | ``well:q:w1,...,wN`` | ``poly:x,y;x,y;...``
    where q is a decimal, a fraction like 4/3, or ``inf``. Polytope
    generators are auto-symmetrized.
    """
    text = text.strip()
    if text == "euclidean":
        return Anisotropy("euclidean", dim)
    if text.startswith("ell:"):
        return Anisotropy("ell", dim, q=_parse_q(text[4:]))
    if text.startswith("well:"):
        parts = text[5:].split(":")
        if len(parts) != 2:
            raise AnisotropyError("well syntax is well:q:w1,...,wN")
        q = _parse_q(parts[0])
        try:
            w = [float(s) for s in parts[1].split(",")]
        except ValueError as exc:
            raise AnisotropyError(f"bad weight list {parts[1]!r}") from exc
        return Anisotropy("well", len(w), q=q, weights=w)
    if text.startswith("poly:"):
        rows = []
        for chunk in text[5:].split(";"):
            try:
                row = [float(s) for s in chunk.split(",")]
            except ValueError as exc:
                raise AnisotropyError(f"bad generator {chunk!r}") from exc
            if len(row) != 2:
                raise AnisotropyError("poly generators are 2-D pairs x,y")
            rows.append(row)
        return Anisotropy("poly", 2, generators=rows)
    raise AnisotropyError(f"unrecognized anisotropy descriptor {text!r}")


def euclidean(dim=2, **kw):
    return Anisotropy("euclidean", dim, **kw)


def ell(q, dim=2, **kw):
    return Anisotropy("ell", dim, q=q, **kw)


def weighted_ell(q, weights, **kw):
    return Anisotropy("well", len(weights), q=q, weights=weights, **kw)


def polytope(generators, dim=2, **kw):
    return Anisotropy("poly", dim, generators=generators, **kw)


def dual_oracle(F, x, n_dirs):
    """Brute-force lower bound of F0(x): max over sampled unit directions d
    of (x . d) / F(d). Converges to F0(x) as n_dirs grows."""
    if n_dirs < 8:
        raise AnisotropyError("need n_dirs >= 8")
    x = _as_vec(x, F.dim)
    if F.dim == 2:
        th = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
        D = np.vstack([np.cos(th), np.sin(th)])
    else:
        rng = np.random.default_rng(97)
        D = rng.standard_normal((F.dim, n_dirs))
        D /= np.linalg.norm(D, axis=0)
    vals = F._eval_cols(D)
    return float(np.max(D.T @ x / vals))
