"""Dense primal-dual interior-point solver for smooth nonlinear programs.

Solves ``min f(x)  s.t.  cE(x) = 0,  cI(x) >= 0,  lb <= x <= ub`` to local
KKT stationarity.  Inequalities are shifted by slacks, bounds and slacks are
handled by a logarithmic barrier with a monotone Fiacco-McCormick schedule,
and steps come from an inertia-corrected symmetric indefinite factorization
of the primal-dual KKT system.  Curvature is approximated by damped BFGS on
the Lagrangian, which keeps the interface first-order only: programs supply
values, gradients and constraint Jacobians, nothing else.

The transcriptions in this package are small and dense (tens to a few
hundred variables), which is what this implementation is sized for.  It is
deterministic: identical inputs and options produce identical iterates.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.linalg

Array = np.ndarray

logger = logging.getLogger("dwellopt.nlp")

_GAMMA_THETA = 1e-5
_GAMMA_PHI = 1e-5
_DELTA_F = 1.0
_S_THETA = 1.1
_S_PHI = 2.3

CONVERGED = "converged"
INFEASIBLE = "infeasible_detected"
ITERATION_LIMIT = "iteration_limit"
DIVERGED = "diverged"


@dataclass
class NlpOptions:
    tolerance: float = 1e-8
    max_iterations: int = 500
    mu_init: float = 1e-1
    mu_linear_factor: float = 0.2
    mu_superlinear_power: float = 1.5
    kappa_eps: float = 10.0
    armijo_eta: float = 1e-4
    max_backtracks: int = 40
    bound_push: float = 1e-2
    verbose: bool = False
    track_iterates: bool = False
    assert_monotone_merit: bool = False
    initial_equality_multipliers: Array | None = None
    initial_inequality_multipliers: Array | None = None


@dataclass
class NlpSolution:
    primal: Array
    equality_multipliers: Array
    inequality_multipliers: Array
    bound_multipliers: Array
    objective: float
    kkt_residual: float
    status: str
    iterations: int
    wall_time: float
    constraint_violation: float
    message: str = ""
    iterate_trace: list | None = None


class FunctionProgram:
    """Adapter turning plain callables into the program interface."""

    def __init__(self, n, objective, gradient, lb=None, ub=None,
                 eq_residuals=None, eq_jacobian=None,
                 ineq_residuals=None, ineq_jacobian=None):
        self.n = n
        self.lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
        self.ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
        self.objective = objective
        self.gradient = gradient
        self.eq_residuals = eq_residuals or (lambda x: np.zeros(0))
        self.eq_jacobian = eq_jacobian or (lambda x: np.zeros((0, n)))
        self.ineq_residuals = ineq_residuals or (lambda x: np.zeros(0))
        self.ineq_jacobian = ineq_jacobian or (lambda x: np.zeros((0, n)))


class _PinnedReduction:
    """Removes variables whose bounds coincide; evaluators see the full vector."""

    def __init__(self, program):
        self.inner = program
        lb = np.asarray(program.lb, dtype=float)
        ub = np.asarray(program.ub, dtype=float)
        pinned = np.isfinite(lb) & np.isfinite(ub) & (ub - lb <= 1e-12)
        self.pinned_values = np.zeros(lb.size)
        self.pinned_values[pinned] = 0.5 * (lb[pinned] + ub[pinned])
        self.free = np.flatnonzero(~pinned)
        self.n = self.free.size
        self.lb = lb[self.free]
        self.ub = ub[self.free]

    def expand(self, xr: Array) -> Array:
        x = self.pinned_values.copy()
        x[self.free] = xr
        return x

    def restrict(self, x: Array) -> Array:
        return np.asarray(x, dtype=float)[self.free]

    def objective(self, xr):
        return self.inner.objective(self.expand(xr))

    def gradient(self, xr):
        return np.asarray(self.inner.gradient(self.expand(xr)))[self.free]

    def eq_residuals(self, xr):
        return self.inner.eq_residuals(self.expand(xr))

    def eq_jacobian(self, xr):
        return np.asarray(self.inner.eq_jacobian(self.expand(xr)))[:, self.free]

    def ineq_residuals(self, xr):
        return self.inner.ineq_residuals(self.expand(xr))

    def ineq_jacobian(self, xr):
        return np.asarray(self.inner.ineq_jacobian(self.expand(xr)))[:, self.free]


def _ldl_solve_factory(K: Array):
    """Factor a symmetric matrix; return (inertia, solve), solve None if singular."""
    n = K.shape[0]
    if n == 0:
        return (0, 0, 0), lambda b: b.copy()
    try:
        lu, d, perm = scipy.linalg.ldl(K, lower=True)
    except Exception:
        return None, None
    Lp = lu[perm, :]
    pos = neg = zero = 0
    scale = max(np.abs(d).max(), 1.0)
    i = 0
    while i < n:
        if i + 1 < n and d[i, i + 1] != 0.0:
            a, b, c = d[i, i], d[i, i + 1], d[i + 1, i + 1]
            det = a * c - b * b
            if det < 0.0:
                pos += 1
                neg += 1
            elif det == 0.0:
                zero += 2
            elif a + c > 0.0:
                pos += 2
            else:
                neg += 2
            i += 2
        else:
            v = d[i, i]
            if abs(v) <= 1e-14 * scale:
                zero += 1
            elif v > 0.0:
                pos += 1
            else:
                neg += 1
            i += 1
    if zero:
        return (pos, neg, zero), None

    def solve_fn(bvec: Array) -> Array:
        t = scipy.linalg.solve_triangular(Lp, bvec[perm], lower=True)
        y = np.empty_like(t)
        j = 0
        while j < n:
            if j + 1 < n and d[j, j + 1] != 0.0:
                a, b2, c = d[j, j], d[j, j + 1], d[j + 1, j + 1]
                det = a * c - b2 * b2
                y[j] = (c * t[j] - b2 * t[j + 1]) / det
                y[j + 1] = (-b2 * t[j] + a * t[j + 1]) / det
                j += 2
            else:
                y[j] = t[j] / d[j, j]
                j += 1
        z = scipy.linalg.solve_triangular(Lp.T, y, lower=False)
        out = np.empty_like(z)
        out[perm] = z
        return out

    return (pos, neg, zero), solve_fn


class _InteriorPoint:
    def __init__(self, program, x0: Array, options: NlpOptions):
        self.prog = program
        self.opt = options
        self.n = program.n
        self.lb = np.asarray(program.lb, dtype=float)
        self.ub = np.asarray(program.ub, dtype=float)
        self.has_lb = np.isfinite(self.lb)
        self.has_ub = np.isfinite(self.ub)
        self.x = self._push_inside(np.asarray(x0, dtype=float).copy())
        self.mu = options.mu_init
        self.W = np.eye(self.n)
        self.iterations = 0
        self.trace = [] if options.track_iterates else None
        self.best_violation = np.inf
        self.best_point = self.x.copy()
        self.message = ""
        self.kkt_raw = np.inf
        self.s = np.zeros(0)
        self.yE = np.zeros(0)
        self.yI = np.zeros(0)
        self.zL = np.zeros(self.n)
        self.zU = np.zeros(self.n)
        self._filter: list[tuple[float, float]] = []
        self._theta_max: float | None = None
        self._force_delta = 0.0
        self._bfgs_virgin = True

    # -- helpers ----------------------------------------------------------

    def _push_inside(self, x: Array) -> Array:
        kappa = self.opt.bound_push
        lo, hi = self.lb, self.ub
        x = np.clip(x, lo, hi)
        both = self.has_lb & self.has_ub
        width = np.where(both, hi - lo, np.inf)
        pad_lo = np.minimum(kappa * np.maximum(1.0, np.abs(np.where(self.has_lb, lo, 0.0))),
                            kappa * width)
        pad_hi = np.minimum(kappa * np.maximum(1.0, np.abs(np.where(self.has_ub, hi, 0.0))),
                            kappa * width)
        x = np.where(self.has_lb, np.maximum(x, lo + pad_lo), x)
        x = np.where(self.has_ub, np.minimum(x, hi - pad_hi), x)
        return x

    def _eval(self, x: Array):
        f = float(self.prog.objective(x))
        g = np.asarray(self.prog.gradient(x), dtype=float)
        cE = np.asarray(self.prog.eq_residuals(x), dtype=float)
        JE = np.asarray(self.prog.eq_jacobian(x), dtype=float).reshape(cE.size, self.n)
        cI = np.asarray(self.prog.ineq_residuals(x), dtype=float)
        JI = np.asarray(self.prog.ineq_jacobian(x), dtype=float).reshape(cI.size, self.n)
        return f, g, cE, JE, cI, JI

    def _values(self, x: Array):
        f = float(self.prog.objective(x))
        cE = np.asarray(self.prog.eq_residuals(x), dtype=float)
        cI = np.asarray(self.prog.ineq_residuals(x), dtype=float)
        return f, cE, cI

    def _barrier(self, f: float, x: Array, s: Array) -> float:
        val = f
        if self.has_lb.any():
            val -= self.mu * np.sum(np.log(x[self.has_lb] - self.lb[self.has_lb]))
        if self.has_ub.any():
            val -= self.mu * np.sum(np.log(self.ub[self.has_ub] - x[self.has_ub]))
        if s.size:
            val -= self.mu * np.sum(np.log(s))
        return val

    def _ftb_primal(self, dx: Array, ds: Array, tau: float) -> float:
        """Largest step in (0, 1] keeping slacks and bounded x interior."""
        alpha = 1.0
        if ds.size:
            negm = ds < 0
            if negm.any():
                alpha = min(alpha, np.min(-tau * self.s[negm] / ds[negm]))
        m = self.has_lb & (dx < 0)
        if m.any():
            alpha = min(alpha, np.min(-tau * (self.x[m] - self.lb[m]) / dx[m]))
        m = self.has_ub & (dx > 0)
        if m.any():
            alpha = min(alpha, np.min(tau * (self.ub[m] - self.x[m]) / dx[m]))
        return float(alpha)

    @staticmethod
    def _orig_violation(cE: Array, cI: Array) -> float:
        parts = []
        if cE.size:
            parts.append(np.abs(cE).max())
        if cI.size:
            parts.append(max(0.0, -(cI.min())))
        return max(parts) if parts else 0.0

    def _residuals(self, g, JE, JI, cE, cI, mu):
        r_stat = g.copy()
        if cE.size:
            r_stat -= JE.T @ self.yE
        if cI.size:
            r_stat -= JI.T @ self.yI
        r_stat -= self.zL
        r_stat += self.zU
        comp = []
        if cI.size:
            comp.append(np.abs(self.s * self.yI - mu).max())
        if self.has_lb.any():
            comp.append(np.abs((self.x[self.has_lb] - self.lb[self.has_lb])
                               * self.zL[self.has_lb] - mu).max())
        if self.has_ub.any():
            comp.append(np.abs((self.ub[self.has_ub] - self.x[self.has_ub])
                               * self.zU[self.has_ub] - mu).max())
        stat = np.abs(r_stat).max() if r_stat.size else 0.0
        feas = 0.0
        if cE.size:
            feas = np.abs(cE).max()
        if cI.size:
            feas = max(feas, np.abs(cI - self.s).max())
        compl = max(comp) if comp else 0.0
        scale = max(100.0, (np.abs(self.yE).sum() + np.abs(self.yI).sum()
                            + self.zL.sum() + self.zU.sum())
                    / max(1, cE.size + cI.size + self.n)) / 100.0
        return stat, feas, compl, max(stat / scale, feas, compl / scale)

    # -- main loop --------------------------------------------------------

    def run(self) -> NlpSolution:
        opt = self.opt
        start = time.perf_counter()
        try:
            f, g, cE, JE, cI, JI = self._eval(self.x)
        except Exception as exc:
            return self._finish(DIVERGED, start, message=f"initial evaluation failed: {exc}")
        if not (np.isfinite(f) and np.all(np.isfinite(g)) and np.all(np.isfinite(cE))
                and np.all(np.isfinite(cI))):
            return self._finish(DIVERGED, start, message="non-finite initial point")

        mE, mI = cE.size, cI.size
        self.s = np.maximum(cI, max(self.mu, 1e-2)) if mI else np.zeros(0)
        if opt.initial_equality_multipliers is not None and \
                np.size(opt.initial_equality_multipliers) == mE:
            self.yE = np.asarray(opt.initial_equality_multipliers, dtype=float).copy()
        else:
            self.yE = np.zeros(mE)
        if opt.initial_inequality_multipliers is not None and \
                np.size(opt.initial_inequality_multipliers) == mI:
            self.yI = np.maximum(np.asarray(opt.initial_inequality_multipliers, dtype=float),
                                 1e-8)
        else:
            self.yI = self.mu / self.s if mI else np.zeros(0)
        self.zL = np.where(self.has_lb, self.mu / np.maximum(self.x - self.lb, 1e-12), 0.0)
        self.zU = np.where(self.has_ub, self.mu / np.maximum(self.ub - self.x, 1e-12), 0.0)
        self.zL = np.minimum(self.zL, 1e4)
        self.zU = np.minimum(self.zU, 1e4)
        self._g_prev, self._JE_prev, self._JI_prev = g, JE, JI

        consecutive_failures = 0
        resets_left = 1
        status = ITERATION_LIMIT

        for it in range(opt.max_iterations):
            self.iterations = it + 1
            viol = self._orig_violation(cE, cI)
            if viol < self.best_violation:
                self.best_violation = viol
                self.best_point = self.x.copy()

            stat0, feas0, comp0, err0 = self._residuals(g, JE, JI, cE, cI, 0.0)
            self.kkt_raw = max(stat0, feas0, comp0)
            if self.trace is not None:
                self.trace.append((it, f, stat0, feas0, comp0, self.mu))
            if opt.verbose:
                logger.info("it=%3d f=% .8e stat=%.2e feas=%.2e comp=%.2e mu=%.1e "
                            "a=%.2e d=%.1e", it, f, stat0, feas0, comp0, self.mu,
                            getattr(self, "_last_alpha", 0.0),
                            getattr(self, "_last_delta", 0.0))
            if err0 <= opt.tolerance:
                status = CONVERGED
                break

            _, _, _, err_mu = self._residuals(g, JE, JI, cE, cI, self.mu)
            while err_mu <= opt.kappa_eps * self.mu and self.mu > opt.tolerance / 11.0:
                self.mu = max(opt.tolerance / 11.0,
                              min(opt.mu_linear_factor * self.mu,
                                  self.mu ** opt.mu_superlinear_power))
                self._filter = []
                _, _, _, err_mu = self._residuals(g, JE, JI, cE, cI, self.mu)

            # Assemble and factor the primal-dual system, correcting inertia.
            n, mu = self.n, self.mu
            dxl = np.where(self.has_lb, self.x - self.lb, np.inf)
            dxu = np.where(self.has_ub, self.ub - self.x, np.inf)
            sigma_x = np.where(self.has_lb, self.zL / dxl, 0.0) + \
                np.where(self.has_ub, self.zU / dxu, 0.0)
            sigma_s = self.yI / self.s if mI else np.zeros(0)
            r1 = g.copy()
            if mE:
                r1 -= JE.T @ self.yE
            if mI:
                r1 -= JI.T @ self.yI
            r1 = r1 - np.where(self.has_lb, mu / dxl, 0.0) + np.where(self.has_ub, mu / dxu, 0.0)
            r2 = (mu / self.s - self.yI) if mI else np.zeros(0)
            rhs = np.concatenate([-r1, r2, -cE, -(cI - self.s)])
            dim = n + mI + mE + mI

            delta = self._force_delta
            delta_c = 0.0
            solve_fn = None
            for _attempt in range(30):
                K = np.zeros((dim, dim))
                K[:n, :n] = self.W
                K[np.arange(n), np.arange(n)] += sigma_x + delta
                if mI:
                    sl = slice(n, n + mI)
                    K[sl, sl] = np.diag(sigma_s + delta)
                    K[sl, n + mI + mE:] = -np.eye(mI)
                    K[n + mI + mE:, sl] = -np.eye(mI)
                if mE:
                    se = slice(n + mI, n + mI + mE)
                    K[se, :n] = JE
                    K[:n, se] = JE.T
                    if delta_c:
                        K[se, se] = -delta_c * np.eye(mE)
                if mI:
                    si = slice(n + mI + mE, dim)
                    K[si, :n] = JI
                    K[:n, si] = JI.T
                    if delta_c:
                        K[si, si] += -delta_c * np.eye(mI)
                inertia, solve_fn = _ldl_solve_factory(K)
                if solve_fn is not None and inertia[0] == n + mI and inertia[1] == mE + mI:
                    break
                if inertia is not None and inertia[2] > 0 and delta_c == 0.0:
                    delta_c = 1e-8 * max(1.0, mu ** 0.25)
                delta = 1e-4 if delta == 0.0 else 8.0 * delta
                solve_fn = None
                if delta > 1e12:
                    break

            if solve_fn is None:
                consecutive_failures += 1
                if consecutive_failures >= 2:
                    status = self._stall_status()
                    break
                continue

            step = solve_fn(rhs)
            dx = step[:n]
            ds = step[n:n + mI]
            dyE = -step[n + mI:n + mI + mE]
            dyI = -step[n + mI + mE:]

            tau = max(0.99, 1.0 - mu)
            alpha_max = self._ftb_primal(dx, ds, tau)

            # Filter line search on (constraint violation, barrier objective).
            theta0 = (np.abs(cE).sum() if mE else 0.0) + \
                (np.abs(cI - self.s).sum() if mI else 0.0)
            grad_bar_x = g - np.where(self.has_lb, mu / dxl, 0.0) \
                + np.where(self.has_ub, mu / dxu, 0.0)
            dphi = float(grad_bar_x @ dx)
            if mI:
                dphi += float((-mu / self.s) @ ds)
            phi0 = self._barrier(f, self.x, self.s)
            if self._theta_max is None:
                self._theta_max = 1e4 * max(1.0, theta0)

            primal_norm = np.abs(dx).max() if n else 0.0
            if mI:
                primal_norm = max(primal_norm, np.abs(ds).max())
            pure_dual = primal_norm <= 1e-14 * max(1.0, np.abs(self.x).max())

            if dphi >= 0.0 and theta0 <= 1e-14 and not pure_dual:
                # Clean factorization but no descent: barrier subproblem is
                # essentially solved; tighten the barrier parameter instead.
                self.mu = max(opt.tolerance / 11.0, 0.2 * self.mu)
                self._filter = []
                continue

            def try_point(x_t, s_t, alpha_t):
                """Evaluate a trial; returns (ok, payload) per the filter rules."""
                try:
                    f_t, cE_t, cI_t = self._values(x_t)
                except Exception:
                    return False, None
                if not (np.isfinite(f_t) and np.all(np.isfinite(cE_t))
                        and np.all(np.isfinite(cI_t))):
                    return False, None
                theta_t = (np.abs(cE_t).sum() if mE else 0.0) + \
                    (np.abs(cI_t - s_t).sum() if mI else 0.0)
                phi_t = self._barrier(f_t, x_t, s_t)
                if theta_t > self._theta_max:
                    return False, None
                for th, ph in self._filter:
                    if theta_t >= th and phi_t >= ph:
                        return False, None
                f_type = (dphi < 0.0 and
                          alpha_t * (-dphi) ** _S_PHI > _DELTA_F * theta0 ** _S_THETA)
                if f_type:
                    ok = phi_t <= phi0 + opt.armijo_eta * alpha_t * dphi
                else:
                    ok = (theta_t <= (1.0 - _GAMMA_THETA) * theta0
                          or phi_t <= phi0 - _GAMMA_PHI * theta0)
                if not ok:
                    return False, None
                return True, (f_t, cE_t, cI_t, theta_t, phi_t, f_type)

            alpha = alpha_max
            accepted = False
            payload = None
            soc_left = 2
            if pure_dual:
                accepted = True
                x_t, s_t = self.x, self.s
                f_t, cE_t, cI_t = f, cE, cI
                payload = (f_t, cE_t, cI_t, theta0, phi0, True)
            for _bt in range(0 if accepted else opt.max_backtracks):
                x_t = self.x + alpha * dx
                s_t = self.s + alpha * ds if mI else self.s
                ok, payload = try_point(x_t, s_t, alpha)
                if ok:
                    accepted = True
                    break
                if soc_left and payload is None:
                    # Second-order correction: resolve the same system with
                    # the constraint violation measured at the trial point to
                    # cancel its curvature-induced growth.
                    soc_left -= 1
                    try:
                        _, cE_t, cI_t = self._values(x_t)
                    except Exception:
                        cE_t = None
                    if cE_t is not None and np.all(np.isfinite(cE_t)) \
                            and np.all(np.isfinite(cI_t)):
                        c2E = alpha * cE + cE_t if mE else cE
                        c2I = alpha * (cI - self.s) + (cI_t - s_t) if mI else cI
                        step2 = solve_fn(np.concatenate([-r1, r2, -c2E, -c2I]))
                        dx2 = step2[:n]
                        ds2 = step2[n:n + mI]
                        alpha2 = self._ftb_primal(dx2, ds2, tau)
                        x2 = self.x + alpha2 * dx2
                        s2 = self.s + alpha2 * ds2 if mI else self.s
                        ok2, payload2 = try_point(x2, s2, alpha2)
                        if ok2:
                            accepted = True
                            dx, ds = dx2, ds2
                            dyE = -step2[n + mI:n + mI + mE]
                            dyI = -step2[n + mI + mE:]
                            alpha = alpha2
                            x_t, s_t = x2, s2
                            payload = payload2
                            break
                alpha *= 0.5
                if alpha < 1e-12:
                    break

            if not accepted:
                consecutive_failures += 1
                if resets_left and consecutive_failures == 1:
                    # One shot at re-centering: fresh slacks and bound duals.
                    resets_left -= 1
                    self.mu = max(self.mu, 1e-2)
                    if mI:
                        self.s = np.maximum(cI, self.mu)
                        self.yI = self.mu / self.s
                    self.zL = np.where(self.has_lb,
                                       self.mu / np.maximum(self.x - self.lb, 1e-12), 0.0)
                    self.zU = np.where(self.has_ub,
                                       self.mu / np.maximum(self.ub - self.x, 1e-12), 0.0)
                    self._filter = []
                    continue
                # Escalate regularization: a more damped, gradient-like step
                # often survives the filter where the raw step does not.
                self._force_delta = 1e-4 if self._force_delta == 0.0 else \
                    16.0 * self._force_delta
                self._filter = []
                if self._force_delta > 1e3 or consecutive_failures >= 6:
                    status = self._stall_status()
                    break
                continue

            f_t, cE_t, cI_t, theta_t, phi_t, f_type = payload
            if opt.assert_monotone_merit:
                # Filter certificate: an accepted pair is never dominated by
                # the pairs of previously accepted steps at this barrier value.
                assert all(theta_t < th or phi_t < ph for th, ph in self._filter), \
                    "accepted step dominated by the filter"
            if not f_type:
                self._filter.append(((1.0 - _GAMMA_THETA) * theta0,
                                     phi0 - _GAMMA_PHI * theta0))

            consecutive_failures = 0
            self._force_delta = 0.0
            self._last_alpha = alpha
            self._last_delta = delta

            # Dual directions: bound duals from the eliminated rows, then a
            # fraction-to-the-boundary dual step length.
            dzL = np.zeros(n)
            mlo = self.has_lb
            dzL[mlo] = (mu - dxl[mlo] * self.zL[mlo]) / dxl[mlo] \
                - (self.zL[mlo] / dxl[mlo]) * dx[mlo]
            dzU = np.zeros(n)
            mhi = self.has_ub
            dzU[mhi] = (mu - dxu[mhi] * self.zU[mhi]) / dxu[mhi] \
                + (self.zU[mhi] / dxu[mhi]) * dx[mhi]
            alpha_z = 1.0
            if mI:
                negm = dyI < 0
                if negm.any():
                    alpha_z = min(alpha_z, np.min(-tau * self.yI[negm] / dyI[negm]))
            m = self.has_lb & (dzL < 0)
            if m.any():
                alpha_z = min(alpha_z, np.min(-tau * self.zL[m] / dzL[m]))
            m = self.has_ub & (dzU < 0)
            if m.any():
                alpha_z = min(alpha_z, np.min(-tau * self.zU[m] / dzU[m]))

            self.x = x_t
            if mI:
                self.s = s_t
                self.yI = self.yI + alpha_z * dyI
            if mE:
                self.yE = self.yE + alpha * dyE
            self.zL = np.where(self.has_lb, self.zL + alpha_z * dzL, 0.0)
            self.zU = np.where(self.has_ub, self.zU + alpha_z * dzU, 0.0)
            # Keep bound duals within a factor of their central-path values.
            lo_gap = np.where(self.has_lb, np.maximum(self.x - self.lb, 1e-300), 1.0)
            hi_gap = np.where(self.has_ub, np.maximum(self.ub - self.x, 1e-300), 1.0)
            kappa_sigma = 1e10
            self.zL = np.where(self.has_lb,
                               np.clip(self.zL, mu / (kappa_sigma * lo_gap),
                                       kappa_sigma * mu / lo_gap), 0.0)
            self.zU = np.where(self.has_ub,
                               np.clip(self.zU, mu / (kappa_sigma * hi_gap),
                                       kappa_sigma * mu / hi_gap), 0.0)

            try:
                f, g, cE, JE, cI, JI = self._eval(self.x)
            except Exception as exc:
                return self._finish(DIVERGED, start, message=f"evaluator failed: {exc}")
            if not (np.isfinite(f) and np.all(np.isfinite(g))):
                return self._finish(DIVERGED, start, message="non-finite accepted point")

            # Damped BFGS update on the Lagrangian gradient.
            s_vec = alpha * dx
            if np.linalg.norm(s_vec) > 1e-13:
                g_new = g.copy()
                g_old = self._g_prev.copy()
                if mE:
                    g_new -= JE.T @ self.yE
                    g_old -= self._JE_prev.T @ self.yE
                if mI:
                    g_new -= JI.T @ self.yI
                    g_old -= self._JI_prev.T @ self.yI
                y_vec = g_new - g_old
                if self._bfgs_virgin:
                    sy0 = float(s_vec @ y_vec)
                    ss0 = float(s_vec @ s_vec)
                    if sy0 > 0.0 and ss0 > 0.0:
                        # Size the initial metric to the observed curvature
                        # along the first step before updating.
                        sigma = sy0 / ss0
                        self.W = np.clip(sigma, 1e-3, 1e5) * np.eye(self.n)
                        self._bfgs_virgin = False
                Ws = self.W @ s_vec
                sWs = float(s_vec @ Ws)
                sy = float(s_vec @ y_vec)
                if sWs > 0.0:
                    if sy < 0.2 * sWs:
                        theta = 0.8 * sWs / (sWs - sy)
                        y_vec = theta * y_vec + (1.0 - theta) * Ws
                        sy = float(s_vec @ y_vec)
                    if sy > 1e-12 * max(1.0, np.linalg.norm(s_vec) * np.linalg.norm(y_vec)):
                        self.W = self.W - np.outer(Ws, Ws) / sWs + np.outer(y_vec, y_vec) / sy
                        if not np.all(np.isfinite(self.W)) or np.abs(self.W).max() > 1e10:
                            self.W = np.eye(self.n)
            self._g_prev, self._JE_prev, self._JI_prev = g, JE, JI

        else:
            status = ITERATION_LIMIT

        return self._finish(status, start)

    def _stall_status(self) -> str:
        if self.best_violation > 1e-6:
            self.message = "no further progress; best iterate remains infeasible"
            return INFEASIBLE
        self.message = "stalled near a feasible point before reaching tolerance"
        return ITERATION_LIMIT

    def _finish(self, status: str, start: float, message: str = "") -> NlpSolution:
        if message:
            self.message = message
        x = self.best_point if status in (INFEASIBLE, DIVERGED) else self.x
        try:
            f, cE, cI = self._values(x)
            viol = self._orig_violation(cE, cI)
        except Exception:
            f, viol = np.nan, np.inf
        return NlpSolution(
            primal=np.asarray(x, dtype=float).copy(),
            equality_multipliers=self.yE.copy(),
            inequality_multipliers=self.yI.copy(),
            bound_multipliers=self.zL - self.zU,
            objective=float(f),
            kkt_residual=float(self.kkt_raw),
            status=status,
            iterations=self.iterations,
            wall_time=time.perf_counter() - start,
            constraint_violation=float(viol),
            message=self.message,
            iterate_trace=self.trace,
        )


def _pinned_only_solution(program, red: _PinnedReduction, options: NlpOptions) -> NlpSolution:
    start = time.perf_counter()
    x = red.pinned_values.copy()
    f = float(program.objective(x))
    cE = np.asarray(program.eq_residuals(x), dtype=float)
    cI = np.asarray(program.ineq_residuals(x), dtype=float)
    viol = _InteriorPoint._orig_violation(cE, cI)
    status = CONVERGED if viol <= options.tolerance else INFEASIBLE
    return NlpSolution(primal=x, equality_multipliers=np.zeros(cE.size),
                       inequality_multipliers=np.zeros(cI.size),
                       bound_multipliers=np.zeros(program.n), objective=f,
                       kkt_residual=viol, status=status, iterations=0,
                       wall_time=time.perf_counter() - start,
                       constraint_violation=viol,
                       message="all variables pinned by bounds")


def solve(program, initial_point: Array, options: NlpOptions | None = None) -> NlpSolution:
    """Solve a smooth program to local KKT stationarity.

    The initial point is clipped into the variable bounds (with an interior
    push); variables whose lower and upper bounds coincide are pinned and
    removed from the optimization before the interior-point iteration runs.
    """
    options = options or NlpOptions()
    x0 = np.asarray(initial_point, dtype=float)
    if x0.shape != (program.n,):
        raise ValueError(f"initial point has shape {x0.shape}, expected ({program.n},)")

    red = _PinnedReduction(program)
    if red.n == program.n:
        return _InteriorPoint(program, x0, options).run()
    if red.n == 0:
        return _pinned_only_solution(program, red, options)
    sol = _InteriorPoint(red, red.restrict(x0), options).run()
    primal = red.expand(sol.primal)
    bound = np.zeros(program.n)
    bound[red.free] = sol.bound_multipliers
    return replace(sol, primal=primal, bound_multipliers=bound)


def solve_with_restarts(program, starts: Sequence[Array],
                        options: NlpOptions | None = None) -> NlpSolution:
    """Solve from several starts; return the best converged solution.

    Ties break toward the earlier start.  If no start converges, the report
    with the most favorable status (then smallest violation) is returned.
    """
    if not len(starts):
        raise ValueError("at least one start is required")
    rank = {CONVERGED: 0, ITERATION_LIMIT: 1, INFEASIBLE: 2, DIVERGED: 3}
    best = None
    best_key = None
    for idx, start in enumerate(starts):
        sol = solve(program, start, options)
        obj = sol.objective if np.isfinite(sol.objective) else np.inf
        key = (rank[sol.status], obj if sol.status == CONVERGED else sol.constraint_violation,
               idx)
        if best is None or key < best_key:
            best, best_key = sol, key
    return best
