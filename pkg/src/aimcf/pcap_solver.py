"""Anisotropic p-capacitary potentials by convex energy minimization.

The discrete energy on a labeled grid is

    E(u) = h^2 sum_T [ (F_d(grad_h u)^2 + eta^2)^(p/2) - eta^p ]

summed over forward-difference stencil cells T that touch at least one
ACTIVE cell; F_d is the (possibly log-sum-exp smoothed) anisotropy and eta
a Huber floor keeping the weight p (F^2+eta^2)^(p/2-1) finite at flat
spots. E is convex: it composes the convex increasing map
s -> (s^2+eta^2)^(p/2) with the convex F_d of a linear map of u.

solve_pcap runs two minimizations differing only in the outer Dirichlet
data, using the closed-form radial profiles

    barrier(x, r) = (F0(x)/r)^((p-N)/(p-1))

at the bracketing Wulff radii r1 (lower) and r2 (upper). Both runs bound
the untruncated potential, and their gap is reported as the truncation
error estimate.

The minimizer is first-order descent: the search direction is the
gradient scaled by a per-cell curvature estimate (the norm-equivalence
constant squared times the local energy weights), the trial step is a
Barzilai-Borwein guess in the scaled metric, and an Armijo backtracking
line search keeps the energy strictly non-increasing. The curvature
scaling matters: at p close to 1 the weights span many orders of
magnitude between the inner collar and the outer band, and unscaled
descent stalls on the first stiff cell.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .grid import ACTIVE, OMEGA, OUTER, ScalarField

__all__ = [
    "SolverConfig", "SolveReport", "RunReport", "SolverError",
    "barrier", "barrier_values", "discrete_energy", "energy_gradient",
    "solve_pcap", "pcap_value",
]

P_FLOOR = 1.0 + 2.0 ** -7


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class FixedStep:
    size: float

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("fixed step size must be positive")


@dataclass(frozen=True)
class Backtracking:
    beta: float = 0.5
    c_armijo: float = 1e-4

    def __post_init__(self):
        if not (0 < self.beta < 1 and 0 < self.c_armijo < 1):
            raise ValueError("backtracking needs beta, c_armijo in (0,1)")


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for one p-energy minimization.

    huber_eta is a relative scale: the solver floors gradients at
    huber_eta times the local barrier gradient magnitude, which keeps the
    floor meaningful across the huge dynamic range of deep-p potentials.
    smoothing_delta defaults to 1e-3 for crystalline norms (required > 0
    there) and is ignored by smooth kinds.
    """
    p: float
    max_iters: int = 4000
    tol_grad: float = 1e-9
    tol_energy: float = 1e-15
    tol_step: float = 0.0
    step_rule: object = Backtracking()
    smoothing_delta: float | None = None
    huber_eta: float = 1e-3

    def __post_init__(self):
        if not (P_FLOOR <= self.p < 2.0):
            raise ValueError(
                f"p={self.p} out of range [{P_FLOOR}, 2) for planar exterior problems")
        if self.tol_grad <= 0 or self.tol_energy <= 0:
            raise ValueError("tolerances must be positive")
        if self.tol_step < 0:
            raise ValueError("tol_step must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.huber_eta < 0:
            raise ValueError("huber_eta must be nonnegative")
        if not isinstance(self.step_rule, (FixedStep, Backtracking)):
            raise ValueError("step_rule must be FixedStep or Backtracking")

    def resolve_delta(self, F):
        """Relative crease temperature for crystalline kinds (0 for smooth)."""
        if not F.is_crystalline:
            return 0.0
        d = 3e-3 if self.smoothing_delta is None else self.smoothing_delta
        if d <= 0:
            raise ValueError("crystalline norms need smoothing_delta > 0 in the solver")
        return d


@dataclass
class RunReport:
    label: str
    iterations: int = 0
    final_energy: float = np.inf
    final_grad_norm: float = np.inf
    converged: bool = False
    stop_reason: str = ""
    energies: list = field(default_factory=list)
    pre_clip_low: float = 0.0
    pre_clip_high: float = 0.0
    clip_active: bool = False
    wall_time: float = 0.0


@dataclass
class SolveReport:
    p: float
    iterations: int
    final_energy: float
    final_grad_norm: float
    lower_field: ScalarField
    upper_field: ScalarField
    sandwich_gap: float
    runs: dict
    wall_time: float

    @property
    def converged(self):
        return all(r.converged for r in self.runs.values())


# --------------------------------------------------------------------------
# barriers


def barrier(F, x, r, p, N=None):
    """Radial profile (F0(x)/r)^((p-N)/(p-1)); equals 1 on the Wulff sphere F0 = r."""
    N = F.dim if N is None else N
    if not (1.0 < p < N):
        raise ValueError(f"barrier needs 1 < p < N, got p={p}, N={N}")
    if r <= 0:
        raise ValueError("barrier radius must be positive")
    s = F.eval_dual(x)
    if s == 0.0:
        raise SolverError("barrier is singular at the Wulff center")
    return float((s / r) ** ((p - N) / (p - 1.0)))


def barrier_values(F, X, Y, r, p, center=(0.0, 0.0)):
    """Vectorized barrier on coordinate arrays; singular cells become +inf."""
    N = F.dim
    s = F.dual_values(X, Y, center=center)
    expo = (p - N) / (p - 1.0)
    with np.errstate(divide="ignore"):
        return np.where(s > 0, (s / r) ** expo, np.inf)


def _barrier_gradient_scale(F, X, Y, r, p, center=(0.0, 0.0)):
    """Pointwise magnitude bound for grad barrier, used to scale the Huber floor."""
    N = F.dim
    beta = (N - p) / (p - 1.0)
    s = np.maximum(F.dual_values(X, Y, center=center), r * 0.5)
    _, Cdual = F.dual_anisotropy().equivalence_constants()
    return beta * (s / r) ** (-beta) / s * Cdual


# --------------------------------------------------------------------------
# discrete energy and its exact gradient


def _stencil_mask(mask):
    a = mask == ACTIVE
    t = a[:-1, :-1] | a[1:, :-1] | a[:-1, 1:]
    return t


def _energy_arrays(fld, F, p, eta):
    h = fld.grid.h
    u = fld.values
    gx = (u[1:, :-1] - u[:-1, :-1]) / h
    gy = (u[:-1, 1:] - u[:-1, :-1]) / h
    T = _stencil_mask(fld.mask)
    Fd, Px, Py = F.energy_terms(gx, gy)
    eta2 = np.square(eta) if np.ndim(eta) else eta * eta
    return h, T, Fd, Px, Py, eta2


def discrete_energy(fld, F, p, eta=None):
    """Huber-shifted p-energy over stencil cells touching an ACTIVE cell.

    eta defaults to F.huber_eta; an array eta gives the per-cell floor the
    solver uses internally.
    """
    if eta is None:
        eta = F.huber_eta
    h, T, Fd, _, _, eta2 = _energy_arrays(fld, F, p, eta)
    G = (Fd * Fd + eta2) ** (p / 2.0) - np.asarray(eta2) ** (p / 2.0)
    return float(h * h * np.sum(G[T]))


def energy_gradient(fld, F, p, eta=None):
    """Exact gradient of discrete_energy w.r.t. ACTIVE cell values."""
    if eta is None:
        eta = F.huber_eta
    h, T, Fd, Px, Py, eta2 = _energy_arrays(fld, F, p, eta)
    g = _gradient_core(fld, F, p, eta2, h, T, Fd, Px, Py)
    out = fld.copy(values=g)
    return out


def _weights(p, Fd, Px, Py, eta2, T):
    F2 = Fd * Fd + eta2
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(F2 > 0.0, p * F2 ** (p / 2.0 - 1.0), 0.0)
    Wx = np.where(T, w * Px, 0.0)
    Wy = np.where(T, w * Py, 0.0)
    return Wx, Wy


def _gradient_core(fld, F, p, eta2, h, T, Fd, Px, Py):
    Wx, Wy = _weights(p, Fd, Px, Py, eta2, T)
    g = np.zeros_like(fld.values)
    g[:-1, :-1] -= Wx + Wy
    g[1:, :-1] += Wx
    g[:-1, 1:] += Wy
    g *= h
    g[fld.mask != ACTIVE] = 0.0
    return g


def pcap_value(fld, F, p):
    """Capacity estimate: re-evaluate the energy with eta = 0 and the exact norm."""
    return discrete_energy(fld, F.with_smoothing(smoothing_delta=0.0), p, eta=0.0)


# --------------------------------------------------------------------------
# the minimizer


class _EnergyProblem:
    """Vectorized energy/gradient on the ACTIVE unknowns of one field.

    eta and delta may be per-cell arrays on the stencil lattice; the
    solver scales both to the local barrier gradient magnitude so the
    regularization strength is uniform relative to the solution.
    """

    def __init__(self, fld, F, p, eta, delta=None):
        self.fld = fld
        self.F = F
        self.p = p
        self.h = fld.grid.h
        self.delta = delta
        self.active = fld.mask == ACTIVE
        self.T = _stencil_mask(fld.mask)
        self.eta2 = np.square(eta) if np.ndim(eta) else float(eta) ** 2
        shift = np.broadcast_to(np.asarray(self.eta2) ** (p / 2.0), self.T.shape)
        self.shift = float(self.h * self.h * np.sum(shift[self.T]))

    def energy(self, u):
        gx = (u[1:, :-1] - u[:-1, :-1]) / self.h
        gy = (u[:-1, 1:] - u[:-1, :-1]) / self.h
        Fd = self.F.energy_terms(gx, gy, delta=self.delta)[0]
        G = (Fd * Fd + self.eta2) ** (self.p / 2.0)
        return float(self.h * self.h * np.sum(G[self.T])) - self.shift

    def energy_grad(self, u):
        gx = (u[1:, :-1] - u[:-1, :-1]) / self.h
        gy = (u[:-1, 1:] - u[:-1, :-1]) / self.h
        Fd, Px, Py = self.F.energy_terms(gx, gy, delta=self.delta)
        F2 = Fd * Fd + self.eta2
        E = float(self.h * self.h * np.sum(F2[self.T] ** (self.p / 2.0))) - self.shift
        Wx, Wy = _weights(self.p, Fd, Px, Py, self.eta2, self.T)
        g = np.zeros_like(u)
        g[:-1, :-1] -= Wx + Wy
        g[1:, :-1] += Wx
        g[:-1, 1:] += Wy
        g *= self.h
        g[~self.active] = 0.0
        return E, g, (Fd, F2)

    def diag_scale(self, u, Fd, F2):
        """Per-cell curvature estimate from the current energy weights."""
        p = self.p
        _, C = self.F.equivalence_constants()
        w = p * F2 ** (p / 2.0 - 1.0)
        curv = w
        if self.F.is_crystalline and self.delta is not None:
            gx = (u[1:, :-1] - u[:-1, :-1]) / self.h
            gy = (u[:-1, 1:] - u[:-1, :-1]) / self.h
            lse = self.F.curvature_scale(gx, gy, delta=self.delta)
            curv = w * (1.0 + Fd * lse / (C * C))
        curv = np.where(self.T, curv, 0.0)
        M = np.zeros_like(self.fld.values)
        M[:-1, :-1] += 2.0 * curv
        M[1:, :-1] += curv
        M[:-1, 1:] += curv
        M *= C * C
        M[~self.active] = 1.0
        floor = max(float(M[self.active].max()) * 1e-14, 1e-300)
        return np.maximum(M, floor)


def _minimize(fld, F, p, eta, delta, cfg, label):
    prob = _EnergyProblem(fld, F, p, eta, delta)
    rep = RunReport(label=label)
    t0 = time.perf_counter()
    u = fld.values
    act = prob.active
    refresh_every = 40
    scale_ref = float(np.max(np.abs(u))) if u.size else 1.0

    E, g, (Fd, F2) = prob.energy_grad(u)
    M = prob.diag_scale(u, Fd, F2)
    rep.energies.append(E)
    s_prev = None
    y_prev = None
    alpha = 0.25
    stall_run = 0
    step_run = 0

    backtracking = isinstance(cfg.step_rule, Backtracking)
    beta = cfg.step_rule.beta if backtracking else 0.0
    c_arm = cfg.step_rule.c_armijo if backtracking else 0.0

    it = 0
    while True:
        gnorm = float(np.max(np.abs(g[act]))) if np.any(act) else 0.0
        if gnorm <= cfg.tol_grad:
            rep.converged, rep.stop_reason = True, "grad_tol"
            break
        if it >= cfg.max_iters:
            rep.converged, rep.stop_reason = False, "max_iters"
            break

        d = g / M
        slope = -float(np.sum(g[act] * d[act]))

        if backtracking:
            if s_prev is not None:
                den = float(np.sum(s_prev * y_prev))
                num = float(np.sum(M[act] * s_prev * s_prev))
                if den > 0 and num > 0:
                    alpha = min(max(num / den, 1e-12), 1e4)
            accepted = False
            a = alpha
            for _ in range(40):
                u_try = u - a * d
                u_try[~act] = u[~act]
                E_try = prob.energy(u_try)
                if E_try <= E + c_arm * a * slope:
                    accepted = True
                    break
                a *= beta
            if not accepted:
                rep.converged, rep.stop_reason = False, "line_search"
                break
        else:
            a = cfg.step_rule.size
            u_try = u - a * d
            u_try[~act] = u[~act]
            E_try = prob.energy(u_try)
            if E_try > E:
                raise SolverError(
                    f"energy increased under fixed step {a}; "
                    "reduce the step or switch to backtracking")

        s_cur = (u_try - u)[act]
        u = u_try
        E_prev = E
        g_old = g
        E, g, (Fd, F2) = prob.energy_grad(u)
        y_cur = (g - g_old)[act]
        rep.energies.append(E)
        it += 1

        # a sweep is a 5-iteration block: stall/step criteria need the whole block
        rel_drop = (E_prev - E) / max(abs(E_prev), 1e-300)
        stall_run = stall_run + 1 if rel_drop <= cfg.tol_energy else 0
        if stall_run >= 5:
            rep.converged, rep.stop_reason = True, "energy_stall"
            break
        if cfg.tol_step > 0:
            # relative scales: the v-transform error tracks |du|/u, so both the
            # accepted displacement and the scaled residual must settle
            denom = np.maximum(np.abs(u[act]), 1e-12 * scale_ref)
            move = float(np.max(np.abs(s_cur) / denom)) if s_cur.size else 0.0
            resid = float(np.max(np.abs((g / M)[act]) / denom)) if s_cur.size else 0.0
            step_run = step_run + 1 if max(move, resid) <= cfg.tol_step else 0
            if step_run >= 5:
                rep.converged, rep.stop_reason = True, "step_tol"
                break

        if it % refresh_every == 0:
            M = prob.diag_scale(u, Fd, F2)
            s_prev = y_prev = None
        else:
            s_prev, y_prev = s_cur, y_cur

    rep.iterations = it
    rep.final_energy = E
    rep.final_grad_norm = float(np.max(np.abs(g[act]))) if np.any(act) else 0.0
    rep.wall_time = time.perf_counter() - t0
    fld.values[:] = u
    return rep


def _default_bc(X, Y):
    return np.ones_like(X)


def solve_pcap(domain, F, cfg, bc_inner=None, init_lower=None, init_upper=None):
    """Bracket the p-capacitary potential on a labeled grid.

    Returns (u_lower, u_upper, report). The lower run imposes the inner
    barrier profile at radius r1 (centered at the recorded inner Wulff
    center) on OUTER cells, the upper run the radius-r2 profile centered
    at the origin; inner Dirichlet data is bc_inner(X, Y) on OMEGA cells
    (default 1). Fields are clipped to [0, sup bc] afterwards; clipping
    activity is recorded in the per-run reports.
    """
    if domain.r1 is None or domain.r2 is None or domain.R_out is None:
        raise SolverError("domain field lacks r1/r2 radii; use build_grid output")
    p = cfg.p
    N = F.dim
    if N != 2:
        raise SolverError("the grid solver is 2-D")
    delta_rel = cfg.resolve_delta(F)

    X, Y = domain.grid.centers()
    bc = (_default_bc if bc_inner is None else bc_inner)(X, Y)
    bc = np.asarray(bc, dtype=float)
    omega = domain.mask == OMEGA
    outer = domain.mask == OUTER
    if np.any(bc[omega] < 0):
        raise SolverError("inner boundary data must be nonnegative")
    sup_bc = float(bc[omega].max())
    if sup_bc <= 0:
        raise SolverError("inner boundary data must be positive somewhere")

    t0 = time.perf_counter()
    results = {}
    fields = {}
    for label, r, center, init in (
        ("lower", domain.r1, domain.r1_center, init_lower),
        ("upper", domain.r2, (0.0, 0.0), init_upper),
    ):
        # Huber floor and crease temperature ride the run's own barrier
        # gradient profile: regularization stays a fixed fraction of the
        # local solution scale across the whole dynamic range.
        gscale = sup_bc * np.maximum(
            _barrier_gradient_scale(F, X[:-1, :-1], Y[:-1, :-1], r, p, center=center),
            1e-300)
        eta = cfg.huber_eta * gscale
        delta = delta_rel * gscale if delta_rel > 0 else None

        data = sup_bc * barrier_values(F, X, Y, r, p, center=center)
        fld = domain.copy()
        if init is None and label == "upper":
            init = fields["lower"]  # same problem up to outer data
        if init is not None:
            fld.values[:] = np.clip(init.values, 0.0, sup_bc)
        else:
            fld.values[:] = np.clip(data, 0.0, sup_bc)
        fld.values[omega] = bc[omega]
        fld.values[outer] = data[outer]
        rep = _minimize(fld, F, p, eta, delta, cfg, label)
        act = fld.mask == ACTIVE
        lo = float(np.min(fld.values[act])) if np.any(act) else 0.0
        hi = float(np.max(fld.values[act])) if np.any(act) else 0.0
        rep.pre_clip_low = min(lo, 0.0)
        rep.pre_clip_high = max(hi - sup_bc, 0.0)
        rep.clip_active = rep.pre_clip_low < 0.0 or rep.pre_clip_high > 0.0
        np.clip(fld.values, 0.0, sup_bc, out=fld.values)
        results[label] = rep
        fields[label] = fld

    lower, upper = fields["lower"], fields["upper"]
    act = domain.mask == ACTIVE
    gap = float(np.max(upper.values[act] - lower.values[act])) if np.any(act) else 0.0
    report = SolveReport(
        p=p,
        iterations=sum(r.iterations for r in results.values()),
        final_energy=results["upper"].final_energy,
        final_grad_norm=max(r.final_grad_norm for r in results.values()),
        lower_field=lower,
        upper_field=upper,
        sandwich_gap=max(gap, 0.0),
        runs=results,
        wall_time=time.perf_counter() - t0,
    )
    return lower, upper, report
