"""Finite-dimensional smooth programs built from problems and sequences.

Every formulation here is a multiple-shooting program: one shooting state
per mode boundary, per-mode dwell times as variables (except on the fixed
relaxation grid), and mode transition maps supplied by the RK4 propagation
with exact map derivatives.  Inequalities are affine in the dwell times and
the scheduling variables, which downstream consumers exploit (the
branch-and-bound prescreens node feasibility with a plain LP).

Formulations:

``sto``               dwell times for a fixed sequence, hard dwell rows
``master_fixed_b``    master sequence with a frozen inclusion pattern
``master_relaxed_b``  master sequence with inclusion and activation
                      variables relaxed into [0, 1]
``isto_penalty``      softened dwell rows with per-mode slacks and the
                      complementarity penalty on slack times dwell
``relaxed_ocp``       relaxed input on a fixed uniform grid, no dwell rows
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InfeasibleAllocationError, LayoutError
from .integrate import propagate_convexified, propagate_mode
from .model import MdtSpec, RelaxedProblem, SwitchedProblem
from .segments import (
    LinearRow,
    SegmentFamily,
    activation_from_inclusion,
    build_activation_inequalities,
    build_mdt_rows,
    enumerate_segments,
    fixed_mdt_rows,
)

Array = np.ndarray

_CONTROL_PROX = 1e-10  # pins controls of collapsed modes, avoids rank loss
_SCHED_PROX = 1e-8     # breaks the flat optimum face in the (b, z) blocks;
                       # perturbs node bounds well below the B&B gap tolerance


@dataclass(frozen=True)
class Schedule:
    """A mode sequence with its dwell times; the decision object of STO."""

    sequence: tuple[int, ...]
    dwell_times: Array

    def __post_init__(self):
        w = np.asarray(self.dwell_times, dtype=float)
        if len(self.sequence) != w.size:
            raise LayoutError("sequence and dwell_times must have equal length")
        if w.size and w.min() < 0:
            raise LayoutError("dwell times must be nonnegative")
        object.__setattr__(self, "dwell_times", w)
        object.__setattr__(self, "sequence", tuple(int(v) for v in self.sequence))

    @property
    def total_dwell(self) -> float:
        return float(self.dwell_times.sum())

    def switch_times(self, start: float = 0.0) -> Array:
        """Mode boundary times: length M+1, starting at ``start``."""
        return start + np.concatenate([[0.0], np.cumsum(self.dwell_times)])


@dataclass(frozen=True)
class NodeAllocation:
    per_mode_steps: tuple[int, ...]
    total_nodes: int

    def __post_init__(self):
        if any(s < 1 for s in self.per_mode_steps):
            raise InfeasibleAllocationError("every mode needs at least one node")
        if sum(self.per_mode_steps) != self.total_nodes:
            raise InfeasibleAllocationError("per-mode steps must sum to the total")


def allocate_nodes(initial_dwell: Sequence[float], total: int) -> NodeAllocation:
    """Apportion ``total`` integration nodes proportionally to dwell times.

    Largest-remainder apportionment with a floor of one node per mode and
    deterministic tie-breaks toward lower mode indices.
    """
    d = np.asarray(initial_dwell, dtype=float)
    if d.size == 0 or d.min() < 0 or d.sum() <= 0:
        raise InfeasibleAllocationError("initial dwell times must be nonnegative, not all zero")
    m = d.size
    if total < m:
        raise InfeasibleAllocationError(f"{total} nodes cannot cover {m} modes")
    quota = total * d / d.sum()
    steps = np.floor(quota).astype(int)
    remainder = quota - steps
    deficit = total - int(steps.sum())
    order = sorted(range(m), key=lambda k: (-remainder[k], k))
    for k in order[:deficit]:
        steps[k] += 1
    # Enforce the floor by taking nodes from the largest allocations.
    while (steps == 0).any():
        k0 = int(np.argmax(steps == 0))
        donor = int(np.argmax(steps))
        steps[donor] -= 1
        steps[k0] += 1
    return NodeAllocation(per_mode_steps=tuple(int(s) for s in steps), total_nodes=total)


class Layout:
    """Named contiguous variable blocks inside one flat vector."""

    def __init__(self, blocks: Sequence[tuple[str, int]]):
        self._spans: dict[str, tuple[int, int]] = {}
        offset = 0
        for name, size in blocks:
            self._spans[name] = (offset, size)
            offset += size
        self.n = offset
        self.block_order = tuple(name for name, _ in blocks)

    def sl(self, name: str) -> slice:
        offset, size = self._spans[name]
        return slice(offset, offset + size)

    def size(self, name: str) -> int:
        return self._spans[name][1]

    def offset(self, name: str) -> int:
        return self._spans[name][0]

    def has(self, name: str) -> bool:
        return name in self._spans


def _rows_to_matrix(rows: list[LinearRow], layout: Layout, n_z: int) -> tuple[Array, Array]:
    """Stack affine rows ``G x + h >= 0`` over the (w, z, b) blocks."""
    G = np.zeros((len(rows), layout.n))
    h = np.zeros(len(rows))
    w_off = layout.offset("w") if layout.has("w") else None
    z_off = layout.offset("z") if layout.has("z") else None
    b_off = layout.offset("b") if layout.has("b") else None
    for r, row in enumerate(rows):
        h[r] = row.constant
        for i, c in row.w_coeffs:
            G[r, w_off + i] += c
        for i, c in row.z_coeffs:
            if z_off is None:
                raise LayoutError("row references activation variables outside layout")
            G[r, z_off + i] += c
        for i, c in row.b_coeffs:
            if b_off is None:
                raise LayoutError("row references inclusion variables outside layout")
            G[r, b_off + i] += c
    return G, h


class ShootingNlp:
    """Multiple-shooting program shared by the dwell-time formulations.

    Variable blocks, in order: shooting states ``x`` of size (M+1)*n_x,
    controls ``u``, dwell times ``w``, then per formulation slacks ``e``,
    activations ``z`` and inclusions ``b``.  Equalities: initial condition,
    shooting continuity, total dwell.  All inequalities are affine and
    exposed through :meth:`linear_inequalities`.
    """

    def __init__(self, problem: SwitchedProblem, sequence: Sequence[int], mdt: MdtSpec,
                 alloc: NodeAllocation, formulation: str, fixed_b: Array | None = None,
                 gamma: float | None = None, gamma0: float | None = None):
        if len(sequence) == 0:
            raise LayoutError("sequence must be nonempty")
        if len(alloc.per_mode_steps) != len(sequence):
            raise LayoutError("node allocation does not match the sequence length")
        self.problem = problem
        self.sequence = tuple(int(v) for v in sequence)
        self.mdt = mdt
        self.alloc = alloc
        self.formulation = formulation
        self.horizon = problem.horizon
        M = len(self.sequence)
        n_x, n_u = problem.state_dim, problem.control_dim
        self.M = M

        self.family: SegmentFamily = enumerate_segments(self.sequence, mdt)
        delta_of = lambda seg: mdt.delta_for(seg.value_index)

        blocks = [("x", (M + 1) * n_x), ("u", n_u * sum(alloc.per_mode_steps)), ("w", M)]
        self.params: dict = {"T": self.horizon}
        rows: list[LinearRow] = []

        if formulation == "sto":
            mdt_rows, _ = build_mdt_rows(self.family, delta_of)
            # Hard rows: every family segment with its activation at one.
            rows = [LinearRow(constant=-abs(r.z_coeffs[0][1]), w_coeffs=r.w_coeffs,
                              label=r.label) for r in mdt_rows]
        elif formulation == "master_fixed_b":
            if fixed_b is None:
                raise LayoutError("master_fixed_b needs an inclusion vector")
            fixed_b = np.asarray(fixed_b)
            if fixed_b.shape != (M,):
                raise LayoutError(f"inclusion vector must have length {M}")
            self.params["b"] = fixed_b.astype(float).copy()
            rows = fixed_mdt_rows(self.family, fixed_b, delta_of)
        elif formulation == "master_relaxed_b":
            blocks.append(("z", len(self.family)))
            blocks.append(("b", M))
            mdt_rows, _ = build_mdt_rows(self.family, delta_of)
            rows = list(mdt_rows)
            rows += build_activation_inequalities(self.family, M)
            # Inclusion gating: w_k <= b_k * T.
            for k in range(M):
                rows.append(LinearRow(constant=0.0, w_coeffs=((k, -1.0),),
                                      b_coeffs=((k, self.horizon),),
                                      label=f"w{k}<=T*b{k}"))
        elif formulation == "isto_penalty":
            if gamma is None or gamma0 is None or gamma <= 0 or gamma0 <= 0:
                raise ValueError("penalty weights must be positive")
            self.params["gamma"] = float(gamma)
            self.params["gamma0"] = float(gamma0)
            blocks.insert(3, ("e", M))
            mdt_rows, _ = build_mdt_rows(self.family, delta_of)
            # Softened rows sum dwell plus slack over the segment members;
            # the slack columns are filled in after the layout exists.
            rows = [LinearRow(constant=-abs(r.z_coeffs[0][1]), w_coeffs=r.w_coeffs,
                              label=r.label + " soft") for r in mdt_rows]
            self._soft_members = [tuple(i for i, _ in r.w_coeffs) for r in mdt_rows]
        else:
            raise LayoutError(f"unknown formulation {formulation!r}")

        self.layout = Layout(blocks)
        self._rows = rows
        G, h = _rows_to_matrix(rows, self.layout, len(self.family))
        if formulation == "isto_penalty":
            e_off = self.layout.offset("e")
            for r, members in enumerate(self._soft_members):
                for i in members:
                    G[r, e_off + i] += 1.0
        self._G, self._h = G, h

        lb = np.full(self.layout.n, -np.inf)
        ub = np.full(self.layout.n, np.inf)
        wsl = self.layout.sl("w")
        lb[wsl] = 0.0
        if formulation == "master_fixed_b":
            ub[wsl] = self.params["b"] * self.horizon
        if formulation == "master_relaxed_b":
            ub[wsl] = self.horizon
            lb[self.layout.sl("z")] = 0.0
            ub[self.layout.sl("z")] = 1.0
            lb[self.layout.sl("b")] = 0.0
            ub[self.layout.sl("b")] = 1.0
        if formulation == "isto_penalty":
            lb[self.layout.sl("e")] = 0.0
        if n_u and problem.control_bounds is not None:
            clb, cub = problem.control_bounds
            reps = self.layout.size("u") // n_u
            lb[self.layout.sl("u")] = np.tile(clb, reps)
            ub[self.layout.sl("u")] = np.tile(cub, reps)
        self.lb, self.ub = lb, ub
        self.n = self.layout.n
        self.n_eq = n_x + M * n_x + 1
        self._cache: dict = {}

    # -- variable helpers ---------------------------------------------------

    def state(self, xv: Array, k: int) -> Array:
        n_x = self.problem.state_dim
        off = self.layout.offset("x") + k * n_x
        return xv[off:off + n_x]

    def controls_of_mode(self, xv: Array, k: int) -> Array:
        n_u = self.problem.control_dim
        if n_u == 0:
            return np.zeros(0)
        start = self.layout.offset("u") + n_u * sum(self.alloc.per_mode_steps[:k])
        return xv[start:start + n_u * self.alloc.per_mode_steps[k]]

    def dwells(self, xv: Array) -> Array:
        return xv[self.layout.sl("w")]

    def assemble(self, states: Array, controls: Array, dwells: Array,
                 e: Array | None = None, z: Array | None = None,
                 b: Array | None = None) -> Array:
        xv = np.zeros(self.n)
        xv[self.layout.sl("x")] = np.asarray(states, dtype=float).ravel()
        if self.layout.size("u"):
            xv[self.layout.sl("u")] = np.asarray(controls, dtype=float).ravel()
        xv[self.layout.sl("w")] = dwells
        if self.layout.has("e"):
            xv[self.layout.sl("e")] = 0.0 if e is None else e
        if self.layout.has("z"):
            xv[self.layout.sl("z")] = 0.0 if z is None else z
        if self.layout.has("b"):
            xv[self.layout.sl("b")] = 1.0 if b is None else b
        return xv

    def initial_point(self, dwell_guess: Array | None = None,
                      control_guess: Array | None = None) -> Array:
        """Uniform dwell split by default; states from a forward rollout."""
        M = self.M
        if dwell_guess is None:
            w = np.full(M, self.horizon / M)
            if self.formulation == "master_fixed_b":
                b = self.params["b"]
                if b.sum() == 0:
                    w = np.zeros(M)
                else:
                    w = np.where(b > 0, self.horizon / b.sum(), 0.0)
        else:
            w = np.asarray(dwell_guess, dtype=float).copy()
        n_u = self.problem.control_dim
        if control_guess is None:
            u = np.zeros(self.layout.size("u"))
            if n_u and self.problem.control_bounds is not None:
                clb, cub = self.problem.control_bounds
                mid = np.where(np.isfinite(clb) & np.isfinite(cub), 0.5 * (clb + cub), 0.0)
                u = np.tile(mid, self.layout.size("u") // n_u)
        else:
            u = np.asarray(control_guess, dtype=float).ravel()
        states = self.rollout_states(w, u)
        e = None
        if self.layout.has("e"):
            e = np.full(M, 1e-2)
        z = None
        b = None
        if self.layout.has("b"):
            b = np.ones(M)
            z = activation_from_inclusion(self.family, np.ones(M, dtype=int)).vector(self.family)
        return self.assemble(states, u, w, e=e, z=z, b=b)

    def rollout_states(self, w: Array, u: Array) -> Array:
        """Forward simulation of the shooting states under a dwell/control guess."""
        n_x = self.problem.state_dim
        states = np.zeros((self.M + 1, n_x))
        states[0] = self.problem.initial_state
        t = 0.0
        for k in range(self.M):
            try:
                prop = propagate_mode(self.problem, states[k], self.controls_slice(u, k),
                                      self.sequence[k], float(w[k]),
                                      self.alloc.per_mode_steps[k], t)
                states[k + 1] = prop.end_state
            except Exception:
                states[k + 1] = states[k]
            t += float(w[k])
        return states

    def controls_slice(self, u_flat: Array, k: int) -> Array:
        n_u = self.problem.control_dim
        if n_u == 0:
            return np.zeros(0)
        start = n_u * sum(self.alloc.per_mode_steps[:k])
        return u_flat[start:start + n_u * self.alloc.per_mode_steps[k]]

    # -- propagation cache ----------------------------------------------------

    def _propagations(self, xv: Array, with_derivatives: bool):
        key = (xv.tobytes(), with_derivatives)
        hit = self._cache.get(key)
        if hit is None and not with_derivatives:
            hit = self._cache.get((xv.tobytes(), True))
        if hit is not None:
            return hit
        w = self.dwells(xv)
        props = []
        start_times = np.concatenate([[0.0], np.cumsum(w)[:-1]])
        for k in range(self.M):
            props.append(propagate_mode(
                self.problem, self.state(xv, k), self.controls_of_mode(xv, k),
                self.sequence[k], float(w[k]), self.alloc.per_mode_steps[k],
                float(start_times[k]), with_derivatives))
        result = (props, start_times)
        self._cache[key] = result
        if len(self._cache) > 4:
            self._cache.pop(next(iter(self._cache)))
        return result

    # -- program interface ------------------------------------------------

    def objective(self, xv: Array) -> float:
        props, _ = self._propagations(xv, False)
        total = sum(p.accumulated_cost for p in props)
        total += self.problem.form.terminal(self.state(xv, self.M))
        if self.layout.size("u"):
            uvec = xv[self.layout.sl("u")]
            total += _CONTROL_PROX * float(uvec @ uvec)
        if self.formulation == "isto_penalty":
            e = xv[self.layout.sl("e")]
            w = self.dwells(xv)
            total += self.params["gamma"] * float(e @ w)
            total += self.params["gamma0"] * float(e @ e)
        if self.formulation == "master_relaxed_b":
            b = xv[self.layout.sl("b")]
            z = xv[self.layout.sl("z")]
            total += _SCHED_PROX * (float((b - 1.0) @ (b - 1.0)) + float(z @ z))
        return float(total)

    def gradient(self, xv: Array) -> Array:
        props, _ = self._propagations(xv, True)
        g = np.zeros(self.n)
        n_x = self.problem.state_dim
        x_off = self.layout.offset("x")
        u_off = self.layout.offset("u")
        w_off = self.layout.offset("w")
        n_u = self.problem.control_dim
        u_cursor = 0
        for k, p in enumerate(props):
            g[x_off + k * n_x:x_off + (k + 1) * n_x] += p.cost_gradient_start_state
            if n_u:
                size = n_u * self.alloc.per_mode_steps[k]
                g[u_off + u_cursor:u_off + u_cursor + size] += p.cost_gradient_controls
                u_cursor += size
            g[w_off + k] += p.cost_derivative_wrt_dwell
            if k and p.cost_derivative_wrt_start_time:
                g[w_off:w_off + k] += p.cost_derivative_wrt_start_time
        g[x_off + self.M * n_x:x_off + (self.M + 1) * n_x] += \
            self.problem.form.terminal_x(self.state(xv, self.M))
        if self.layout.size("u"):
            g[self.layout.sl("u")] += 2.0 * _CONTROL_PROX * xv[self.layout.sl("u")]
        if self.formulation == "isto_penalty":
            e = xv[self.layout.sl("e")]
            w = self.dwells(xv)
            g[self.layout.sl("w")] += self.params["gamma"] * e
            g[self.layout.sl("e")] += self.params["gamma"] * w + 2.0 * self.params["gamma0"] * e
        if self.formulation == "master_relaxed_b":
            g[self.layout.sl("b")] += 2.0 * _SCHED_PROX * (xv[self.layout.sl("b")] - 1.0)
            g[self.layout.sl("z")] += 2.0 * _SCHED_PROX * xv[self.layout.sl("z")]
        return g

    def eq_residuals(self, xv: Array) -> Array:
        props, _ = self._propagations(xv, False)
        n_x = self.problem.state_dim
        r = np.zeros(self.n_eq)
        r[:n_x] = self.state(xv, 0) - self.problem.initial_state
        for k, p in enumerate(props):
            r[(k + 1) * n_x:(k + 2) * n_x] = self.state(xv, k + 1) - p.end_state
        r[-1] = self.dwells(xv).sum() - self.horizon
        return r

    def eq_jacobian(self, xv: Array) -> Array:
        props, _ = self._propagations(xv, True)
        n_x = self.problem.state_dim
        n_u = self.problem.control_dim
        J = np.zeros((self.n_eq, self.n))
        x_off = self.layout.offset("x")
        u_off = self.layout.offset("u")
        w_off = self.layout.offset("w")
        J[:n_x, x_off:x_off + n_x] = np.eye(n_x)
        u_cursor = 0
        for k, p in enumerate(props):
            rows = slice((k + 1) * n_x, (k + 2) * n_x)
            J[rows, x_off + (k + 1) * n_x:x_off + (k + 2) * n_x] = np.eye(n_x)
            J[rows, x_off + k * n_x:x_off + (k + 1) * n_x] = -p.jacobian_wrt_start_state
            if n_u:
                size = n_u * self.alloc.per_mode_steps[k]
                J[rows, u_off + u_cursor:u_off + u_cursor + size] = -p.jacobian_wrt_controls
                u_cursor += size
            J[rows, w_off + k] = -p.derivative_wrt_dwell
            if k and np.any(p.derivative_wrt_start_time):
                J[rows, w_off:w_off + k] = -p.derivative_wrt_start_time[:, None]
        J[-1, self.layout.sl("w")] = 1.0
        return J

    def ineq_residuals(self, xv: Array) -> Array:
        return self._G @ xv + self._h

    def ineq_jacobian(self, xv: Array) -> Array:
        return self._G

    def linear_inequalities(self) -> tuple[Array, Array]:
        """The affine inequality system ``G x + h >= 0`` of this program."""
        return self._G.copy(), self._h.copy()

    def row_labels(self) -> list[str]:
        return [r.label for r in self._rows]

    def copy_with_bounds(self, lb: Array, ub: Array) -> "ShootingNlp":
        """Same program with replaced variable bounds and a fresh cache."""
        clone = copy.copy(self)
        clone.lb = np.asarray(lb, dtype=float).copy()
        clone.ub = np.asarray(ub, dtype=float).copy()
        clone._cache = {}
        return clone

    def describe(self) -> str:
        lines = [f"formulation: {self.formulation}",
                 f"variables: {self.n}  equalities: {self.n_eq}  "
                 f"inequalities: {self._G.shape[0]}"]
        for name in self.layout.block_order:
            sl = self.layout.sl(name)
            lines.append(f"  block {name}: offset {sl.start} size {self.layout.size(name)}")
        finite_lb = int(np.isfinite(self.lb).sum())
        finite_ub = int(np.isfinite(self.ub).sum())
        lines.append(f"  finite lower bounds: {finite_lb}, finite upper bounds: {finite_ub}")
        lines.append(f"  inequality nonzeros: {int(np.count_nonzero(self._G))}")
        return "\n".join(lines)


def transcribe_sto(problem: SwitchedProblem, sequence: Sequence[int], mdt: MdtSpec,
                   alloc: NodeAllocation) -> ShootingNlp:
    """Dwell-time program for a fixed sequence with hard dwell rows.

    Rows cover the full segment family of the sequence; joined-interval rows
    are redundant while no mode has collapsed, and harmless.
    """
    return ShootingNlp(problem, sequence, mdt, alloc, "sto")


def transcribe_master(problem: SwitchedProblem, master: Sequence[int], mdt: MdtSpec,
                      alloc: NodeAllocation, b_mode: str = "relaxed",
                      b: Array | None = None) -> ShootingNlp:
    """Master-sequence program, either with relaxed or frozen inclusions.

    Relaxed: inclusion and activation variables live in [0, 1] with the
    activation inequality system and dwell gating rows.  Fixed: activations
    are substituted by the logical evaluation, excluded modes have their
    dwell pinned to zero through the bounds, and only surviving dwell rows
    remain.
    """
    if b_mode == "relaxed":
        return ShootingNlp(problem, master, mdt, alloc, "master_relaxed_b")
    if b_mode == "fixed":
        return ShootingNlp(problem, master, mdt, alloc, "master_fixed_b", fixed_b=b)
    raise LayoutError(f"unknown b_mode {b_mode!r}")


def transcribe_isto(problem: SwitchedProblem, sequence: Sequence[int], mdt: MdtSpec,
                    alloc: NodeAllocation, gamma: float, gamma0: float) -> ShootingNlp:
    """Softened dwell rows with per-mode slacks and complementarity penalty."""
    return ShootingNlp(problem, sequence, mdt, alloc, "isto_penalty",
                       gamma=gamma, gamma0=gamma0)


class RelaxedOcpNlp:
    """Relaxed problem on a fixed uniform grid: states and per-interval inputs.

    One RK4 step per grid interval; equalities are the initial condition,
    the shooting continuity, and (for outer convexification) one simplex row
    per interval.  Dwell rows do not apply to the relaxed problem.
    """

    def __init__(self, relaxed: RelaxedProblem, grid_n: int):
        if grid_n < 1:
            raise LayoutError("grid must have at least one interval")
        self.relaxed = relaxed
        base = relaxed.base
        self.grid_n = grid_n
        self.h = base.horizon / grid_n
        self.n_x = base.state_dim
        self.n_u = base.control_dim
        self.d = relaxed.input_dim
        self.formulation = "relaxed_ocp"
        self.params = {"grid_n": grid_n}
        self.layout = Layout([
            ("x", (grid_n + 1) * self.n_x),
            ("u", grid_n * self.n_u),
            ("a", grid_n * self.d),
        ])
        self.n = self.layout.n
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        alo, ahi = relaxed.input_bounds()
        lb[self.layout.sl("a")] = np.tile(alo, grid_n)
        ub[self.layout.sl("a")] = np.tile(ahi, grid_n)
        if self.n_u and base.control_bounds is not None:
            clb, cub = base.control_bounds
            lb[self.layout.sl("u")] = np.tile(clb, grid_n)
            ub[self.layout.sl("u")] = np.tile(cub, grid_n)
        self.lb, self.ub = lb, ub
        self.simplex = relaxed.simplex_constrained()
        self.n_eq = self.n_x + grid_n * self.n_x + (grid_n if self.simplex else 0)
        self._cache: dict = {}

    # -- helpers ------------------------------------------------------------

    def state(self, xv: Array, j: int) -> Array:
        off = self.layout.offset("x") + j * self.n_x
        return xv[off:off + self.n_x]

    def interval_inputs(self, xv: Array, j: int) -> Array:
        """Extended per-interval input (u_j, a_j)."""
        u = xv[self.layout.offset("u") + j * self.n_u:
               self.layout.offset("u") + (j + 1) * self.n_u]
        a = xv[self.layout.offset("a") + j * self.d:
               self.layout.offset("a") + (j + 1) * self.d]
        return np.concatenate([u, a])

    def inputs_matrix(self, xv: Array) -> Array:
        """Per-interval relaxed inputs as a (grid_n, d) matrix."""
        return xv[self.layout.sl("a")].reshape(self.grid_n, self.d)

    def initial_point(self) -> Array:
        xv = np.zeros(self.n)
        a0 = self.relaxed.initial_input()
        xv[self.layout.sl("a")] = np.tile(a0, self.grid_n)
        x = self.relaxed.base.initial_state.copy()
        states = [x]
        for j in range(self.grid_n):
            try:
                prop = propagate_convexified(self.relaxed, x, self.interval_inputs(xv, j),
                                             self.h, 1, j * self.h)
                x = prop.end_state
            except Exception:
                pass
            states.append(x)
        xv[self.layout.sl("x")] = np.concatenate(states)
        return xv

    def _propagations(self, xv: Array, with_derivatives: bool):
        key = (xv.tobytes(), with_derivatives)
        hit = self._cache.get(key)
        if hit is None and not with_derivatives:
            hit = self._cache.get((xv.tobytes(), True))
        if hit is not None:
            return hit
        props = [propagate_convexified(self.relaxed, self.state(xv, j),
                                       self.interval_inputs(xv, j), self.h, 1,
                                       j * self.h, with_derivatives)
                 for j in range(self.grid_n)]
        self._cache[key] = props
        if len(self._cache) > 4:
            self._cache.pop(next(iter(self._cache)))
        return props

    # -- program interface ----------------------------------------------------

    def objective(self, xv: Array) -> float:
        props = self._propagations(xv, False)
        total = sum(p.accumulated_cost for p in props)
        total += self.relaxed.base.form.terminal(self.state(xv, self.grid_n))
        if self.n_u:
            uvec = xv[self.layout.sl("u")]
            total += _CONTROL_PROX * float(uvec @ uvec)
        return float(total)

    def gradient(self, xv: Array) -> Array:
        props = self._propagations(xv, True)
        g = np.zeros(self.n)
        x_off = self.layout.offset("x")
        for j, p in enumerate(props):
            g[x_off + j * self.n_x:x_off + (j + 1) * self.n_x] += p.cost_gradient_start_state
            ext = p.cost_gradient_controls
            if self.n_u:
                g[self.layout.offset("u") + j * self.n_u:
                  self.layout.offset("u") + (j + 1) * self.n_u] += ext[:self.n_u]
            g[self.layout.offset("a") + j * self.d:
              self.layout.offset("a") + (j + 1) * self.d] += ext[self.n_u:]
        g[x_off + self.grid_n * self.n_x:x_off + (self.grid_n + 1) * self.n_x] += \
            self.relaxed.base.form.terminal_x(self.state(xv, self.grid_n))
        if self.n_u:
            g[self.layout.sl("u")] += 2.0 * _CONTROL_PROX * xv[self.layout.sl("u")]
        return g

    def eq_residuals(self, xv: Array) -> Array:
        props = self._propagations(xv, False)
        r = np.zeros(self.n_eq)
        r[:self.n_x] = self.state(xv, 0) - self.relaxed.base.initial_state
        for j, p in enumerate(props):
            r[(j + 1) * self.n_x:(j + 2) * self.n_x] = self.state(xv, j + 1) - p.end_state
        if self.simplex:
            amat = self.inputs_matrix(xv)
            r[(self.grid_n + 1) * self.n_x:] = amat.sum(axis=1) - 1.0
        return r

    def eq_jacobian(self, xv: Array) -> Array:
        props = self._propagations(xv, True)
        J = np.zeros((self.n_eq, self.n))
        x_off = self.layout.offset("x")
        J[:self.n_x, x_off:x_off + self.n_x] = np.eye(self.n_x)
        for j, p in enumerate(props):
            rows = slice((j + 1) * self.n_x, (j + 2) * self.n_x)
            J[rows, x_off + (j + 1) * self.n_x:x_off + (j + 2) * self.n_x] = np.eye(self.n_x)
            J[rows, x_off + j * self.n_x:x_off + (j + 1) * self.n_x] = \
                -p.jacobian_wrt_start_state
            ext = p.jacobian_wrt_controls
            if self.n_u:
                J[rows, self.layout.offset("u") + j * self.n_u:
                  self.layout.offset("u") + (j + 1) * self.n_u] = -ext[:, :self.n_u]
            J[rows, self.layout.offset("a") + j * self.d:
              self.layout.offset("a") + (j + 1) * self.d] = -ext[:, self.n_u:]
        if self.simplex:
            for j in range(self.grid_n):
                row = (self.grid_n + 1) * self.n_x + j
                J[row, self.layout.offset("a") + j * self.d:
                  self.layout.offset("a") + (j + 1) * self.d] = 1.0
        return J

    def ineq_residuals(self, xv: Array) -> Array:
        return np.zeros(0)

    def ineq_jacobian(self, xv: Array) -> Array:
        return np.zeros((0, self.n))

    def copy_with_input_bounds(self, alo: Array, ahi: Array) -> "RelaxedOcpNlp":
        """Same grid program with per-interval input bounds replaced.

        Used to pin the multipliers to a rounded binary pattern; pinned
        variables are eliminated inside the solver.
        """
        clone = copy.copy(self)
        clone.lb = self.lb.copy()
        clone.ub = self.ub.copy()
        clone.lb[self.layout.sl("a")] = np.asarray(alo, dtype=float).ravel()
        clone.ub[self.layout.sl("a")] = np.asarray(ahi, dtype=float).ravel()
        clone._cache = {}
        return clone

    def describe(self) -> str:
        return (f"formulation: {self.formulation}\n"
                f"variables: {self.n}  equalities: {self.n_eq}  inequalities: 0\n"
                f"grid intervals: {self.grid_n}  step: {self.h}")


def transcribe_relaxed_ocp(relaxed: RelaxedProblem, grid_n: int) -> RelaxedOcpNlp:
    """Relaxed control problem on ``grid_n`` uniform intervals."""
    return RelaxedOcpNlp(relaxed, grid_n)
