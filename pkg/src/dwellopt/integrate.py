"""Per-mode transition maps via fixed-step RK4 with exact map derivatives.

A mode propagation advances the state and an accumulated-cost quadrature
state over one dwell interval with ``steps`` classic RK4 steps of size
``dwell / steps``.  Derivatives are obtained by forward-mode chain rule
through the discrete RK4 recursion, so they are derivatives of the map the
transcriptions actually use (including the sensitivity to the dwell time
through the step size, and to the interval start time for time-varying
problems), not of the continuous flow.  Finite differences appear only in
the test suite as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrationDivergedError
from .model import BOX_HULL, RelaxedProblem, SwitchedProblem

Array = np.ndarray

_STAGE_OFFSETS = (0.0, 0.5, 0.5, 1.0)
_STAGE_WEIGHTS = (1.0, 2.0, 2.0, 1.0)


@dataclass(frozen=True)
class ModePropagation:
    """End state, accumulated cost and derivative blocks for one mode.

    ``jacobian_wrt_controls`` covers the per-substep control blocks in
    order; for convexified propagation the control blocks are the extended
    per-substep inputs (continuous controls followed by the relaxed input
    channels).  Derivative blocks are ``None`` unless requested.
    """

    end_state: Array
    accumulated_cost: float
    jacobian_wrt_start_state: Array | None = None
    jacobian_wrt_controls: Array | None = None
    derivative_wrt_dwell: Array | None = None
    derivative_wrt_start_time: Array | None = None
    cost_gradient_start_state: Array | None = None
    cost_gradient_controls: Array | None = None
    cost_derivative_wrt_dwell: float | None = None
    cost_derivative_wrt_start_time: float | None = None


class _BoundEvaluators:
    """Subsystem callables with the discrete value already bound."""

    __slots__ = ("rhs", "rhs_x", "rhs_u", "rhs_t", "cost", "cost_x", "cost_u", "cost_t", "n_u")

    def __init__(self, rhs, rhs_x, rhs_u, rhs_t, cost, cost_x, cost_u, cost_t, n_u):
        self.rhs = rhs
        self.rhs_x = rhs_x
        self.rhs_u = rhs_u
        self.rhs_t = rhs_t
        self.cost = cost
        self.cost_x = cost_x
        self.cost_u = cost_u
        self.cost_t = cost_t
        self.n_u = n_u


def _bind_mode(problem: SwitchedProblem, v_index: int) -> _BoundEvaluators:
    form = problem.form
    v = problem.discrete_values[v_index]
    return _BoundEvaluators(
        rhs=lambda x, u, t: form.rhs(x, u, v, t),
        rhs_x=lambda x, u, t: form.rhs_x(x, u, v, t),
        rhs_u=lambda x, u, t: form.rhs_u(x, u, v, t),
        rhs_t=lambda x, u, t: form.rhs_t(x, u, v, t),
        cost=lambda x, u, t: form.cost(x, u, v, t),
        cost_x=lambda x, u, t: form.cost_x(x, u, v, t),
        cost_u=lambda x, u, t: form.cost_u(x, u, v, t),
        cost_t=lambda x, u, t: form.cost_t(x, u, v, t),
        n_u=problem.control_dim,
    )


def _bind_convexified(relaxed: RelaxedProblem) -> _BoundEvaluators:
    """Extended-input evaluators for a relaxed problem.

    The extended control vector per substep is ``(u, r)`` where ``r`` is the
    scalar hull input (box hull) or the multiplier vector (outer
    convexification).
    """
    form = relaxed.base.form
    base = relaxed.base
    n_u = base.control_dim
    if relaxed.relaxation_kind == BOX_HULL:
        cost_v = form.cost_v if form.cost_v is not None else (lambda x, u, v, t: 0.0)

        def rhs(x, ue, t):
            return form.rhs(x, ue[:n_u], ue[n_u], t)

        def rhs_u(x, ue, t):
            return np.hstack([form.rhs_u(x, ue[:n_u], ue[n_u], t),
                              form.rhs_v(x, ue[:n_u], ue[n_u], t)[:, None]])

        def cost(x, ue, t):
            return form.cost(x, ue[:n_u], ue[n_u], t)

        def cost_u(x, ue, t):
            return np.append(form.cost_u(x, ue[:n_u], ue[n_u], t),
                             cost_v(x, ue[:n_u], ue[n_u], t))

        return _BoundEvaluators(
            rhs=rhs,
            rhs_x=lambda x, ue, t: form.rhs_x(x, ue[:n_u], ue[n_u], t),
            rhs_u=rhs_u,
            rhs_t=lambda x, ue, t: form.rhs_t(x, ue[:n_u], ue[n_u], t),
            cost=cost,
            cost_x=lambda x, ue, t: form.cost_x(x, ue[:n_u], ue[n_u], t),
            cost_u=cost_u,
            cost_t=lambda x, ue, t: form.cost_t(x, ue[:n_u], ue[n_u], t),
            n_u=n_u + 1,
        )

    values = base.discrete_values

    def rhs(x, ue, t):
        u, a = ue[:n_u], ue[n_u:]
        out = a[0] * form.rhs(x, u, values[0], t)
        for i in range(1, len(values)):
            out = out + a[i] * form.rhs(x, u, values[i], t)
        return out

    def rhs_x(x, ue, t):
        u, a = ue[:n_u], ue[n_u:]
        out = a[0] * form.rhs_x(x, u, values[0], t)
        for i in range(1, len(values)):
            out = out + a[i] * form.rhs_x(x, u, values[i], t)
        return out

    def rhs_u(x, ue, t):
        u, a = ue[:n_u], ue[n_u:]
        ucols = a[0] * form.rhs_u(x, u, values[0], t)
        for i in range(1, len(values)):
            ucols = ucols + a[i] * form.rhs_u(x, u, values[i], t)
        acols = np.column_stack([form.rhs(x, u, values[i], t) for i in range(len(values))])
        return np.hstack([ucols, acols])

    def rhs_t(x, ue, t):
        u, a = ue[:n_u], ue[n_u:]
        out = a[0] * form.rhs_t(x, u, values[0], t)
        for i in range(1, len(values)):
            out = out + a[i] * form.rhs_t(x, u, values[i], t)
        return out

    def cost(x, ue, t):
        u, a = ue[:n_u], ue[n_u:]
        return float(sum(a[i] * form.cost(x, u, values[i], t) for i in range(len(values))))

    def cost_x(x, ue, t):
        u, a = ue[:n_u], ue[n_u:]
        out = a[0] * form.cost_x(x, u, values[0], t)
        for i in range(1, len(values)):
            out = out + a[i] * form.cost_x(x, u, values[i], t)
        return out

    def cost_u(x, ue, t):
        u, a = ue[:n_u], ue[n_u:]
        ucols = a[0] * form.cost_u(x, u, values[0], t)
        for i in range(1, len(values)):
            ucols = ucols + a[i] * form.cost_u(x, u, values[i], t)
        acols = np.array([form.cost(x, u, values[i], t) for i in range(len(values))])
        return np.append(ucols, acols)

    def cost_t(x, ue, t):
        u, a = ue[:n_u], ue[n_u:]
        return float(sum(a[i] * form.cost_t(x, u, values[i], t) for i in range(len(values))))

    return _BoundEvaluators(rhs, rhs_x, rhs_u, rhs_t, cost, cost_x, cost_u, cost_t,
                            n_u + len(values))


def _propagate(ev: _BoundEvaluators, start_state: Array, controls: Array, dwell: float,
               steps: int, start_time: float, with_derivatives: bool,
               mode_label: int) -> ModePropagation:
    if dwell < 0:
        raise ValueError(f"dwell time must be nonnegative, got {dwell}")
    if steps < 1:
        raise ValueError("steps must be a positive integer")
    n_u = ev.n_u
    controls = np.asarray(controls, dtype=float).ravel()
    if controls.size != steps * n_u:
        raise ValueError(f"expected {steps * n_u} control entries, got {controls.size}")

    x = np.asarray(start_state, dtype=float).copy()
    n_x = x.size
    q = 0.0
    h = dwell / steps

    if with_derivatives:
        n_p = n_x + steps * n_u + 2
        iw, it = n_p - 2, n_p - 1
        X = np.zeros((n_x, n_p))
        X[:, :n_x] = np.eye(n_x)
        qg = np.zeros(n_p)

    for j in range(steps):
        u_j = controls[j * n_u:(j + 1) * n_u]
        ucols = slice(n_x + j * n_u, n_x + (j + 1) * n_u)
        t_j = start_time + j * h

        k_prev = None
        dk_prev = None
        k_acc = np.zeros(n_x)
        l_acc = 0.0
        if with_derivatives:
            dk_acc = np.zeros((n_x, n_p))
            dl_acc = np.zeros(n_p)

        for c, wgt in zip(_STAGE_OFFSETS, _STAGE_WEIGHTS):
            if c == 0.0:
                xs, ts = x, t_j
            else:
                xs = x + (c * h) * k_prev
                ts = t_j + c * h
            k = ev.rhs(xs, u_j, ts)
            if not np.all(np.isfinite(k)):
                raise IntegrationDivergedError(
                    f"non-finite dynamics in mode {mode_label} at step {j}",
                    mode=mode_label, step=j)
            l = ev.cost(xs, u_j, ts)
            if with_derivatives:
                if c == 0.0:
                    Xs = X
                else:
                    Xs = X + (c * h) * dk_prev
                    Xs[:, iw] += (c / steps) * k_prev
                A = ev.rhs_x(xs, u_j, ts)
                dk = A @ Xs
                if n_u:
                    dk[:, ucols] += ev.rhs_u(xs, u_j, ts)
                ft = ev.rhs_t(xs, u_j, ts)
                dk[:, iw] += ((j + c) / steps) * ft
                dk[:, it] += ft
                lx = ev.cost_x(xs, u_j, ts)
                dl = lx @ Xs
                if n_u:
                    dl[ucols] += ev.cost_u(xs, u_j, ts)
                lt = ev.cost_t(xs, u_j, ts)
                dl[iw] += ((j + c) / steps) * lt
                dl[it] += lt
                dk_acc += wgt * dk
                dl_acc += wgt * dl
                dk_prev = dk
            k_acc += wgt * k
            l_acc += wgt * l
            k_prev = k

        x = x + (h / 6.0) * k_acc
        q = q + (h / 6.0) * l_acc
        if not np.all(np.isfinite(x)) or not np.isfinite(q):
            raise IntegrationDivergedError(
                f"non-finite state in mode {mode_label} after step {j}",
                mode=mode_label, step=j)
        if with_derivatives:
            X = X + (h / 6.0) * dk_acc
            X[:, iw] += k_acc / (6.0 * steps)
            qg = qg + (h / 6.0) * dl_acc
            qg[iw] += l_acc / (6.0 * steps)

    if not with_derivatives:
        return ModePropagation(end_state=x, accumulated_cost=q)
    return ModePropagation(
        end_state=x,
        accumulated_cost=q,
        jacobian_wrt_start_state=X[:, :n_x],
        jacobian_wrt_controls=X[:, n_x:n_x + steps * n_u],
        derivative_wrt_dwell=X[:, iw].copy(),
        derivative_wrt_start_time=X[:, it].copy(),
        cost_gradient_start_state=qg[:n_x],
        cost_gradient_controls=qg[n_x:n_x + steps * n_u],
        cost_derivative_wrt_dwell=float(qg[iw]),
        cost_derivative_wrt_start_time=float(qg[it]),
    )


def propagate_mode(problem: SwitchedProblem, start_state: Array, controls: Array,
                   v_index: int, dwell: float, steps: int, start_time: float = 0.0,
                   with_derivatives: bool = False) -> ModePropagation:
    """Integrate one mode of ``problem`` over its dwell interval.

    ``controls`` holds ``steps`` per-substep constant control blocks of
    length ``problem.control_dim`` each.  A zero dwell returns the start
    state and zero cost exactly.
    """
    return _propagate(_bind_mode(problem, v_index), start_state, controls,
                      dwell, steps, start_time, with_derivatives, v_index)


def propagate_convexified(relaxed: RelaxedProblem, start_state: Array,
                          extended_controls: Array, dwell: float, steps: int,
                          start_time: float = 0.0,
                          with_derivatives: bool = False) -> ModePropagation:
    """Integrate relaxed dynamics with per-substep inputs held constant.

    ``extended_controls`` concatenates, per substep, the continuous control
    block and the relaxed input channels (one hull scalar, or one multiplier
    per discrete value).  Multipliers are not projected here; simplex
    feasibility is the transcription's responsibility.
    """
    return _propagate(_bind_convexified(relaxed), start_state, extended_controls,
                      dwell, steps, start_time, with_derivatives, -1)
