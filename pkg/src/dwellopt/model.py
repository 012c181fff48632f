"""Problem definitions: switched systems, dwell-time bounds, and relaxations.

A switched problem is a set of smooth subsystems indexed by a finite list of
discrete input values, together with a stage cost integrand, a terminal cost,
a horizon and an initial state.  Subsystem evaluators and their analytic
partial derivatives are bundled in a :class:`DynamicsForm`; the four shipped
benchmarks are configured from ``benchmarks.ini`` and map onto named forms
registered here.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, UnsupportedRelaxationError

Array = np.ndarray

BOX_HULL = "box_hull"
OUTER_CONVEXIFICATION = "outer_convexification"


@dataclass(frozen=True)
class DynamicsForm:
    """Evaluator bundle for one family of subsystem dynamics.

    All callables receive ``(x, u, v, t)`` where ``v`` is the discrete input
    *value* (scalar for the shipped benchmarks), and return numpy arrays:

    ``rhs``        state derivative, shape ``(n_x,)``
    ``rhs_x``      Jacobian w.r.t. state, ``(n_x, n_x)``
    ``rhs_u``      Jacobian w.r.t. continuous control, ``(n_x, n_u)``
    ``rhs_t``      partial w.r.t. time, ``(n_x,)``
    ``rhs_v``      partial w.r.t. the (scalar) value, ``(n_x,)``; only needed
                   for interval-hull relaxations
    ``cost``       stage cost integrand, scalar
    ``cost_x/u/t/v``  its partials
    ``terminal``   terminal cost ``E(x)``, scalar, with gradient ``terminal_x``

    Evaluators must be deterministic, side-effect free and smooth in
    ``(x, u)``; derivative propagation through the integrator relies on the
    analytic partials (finite differences are used only as a test oracle).
    """

    name: str
    rhs: Callable
    rhs_x: Callable
    rhs_u: Callable
    rhs_t: Callable
    cost: Callable
    cost_x: Callable
    cost_u: Callable
    cost_t: Callable
    terminal: Callable
    terminal_x: Callable
    rhs_v: Callable | None = None
    cost_v: Callable | None = None


@dataclass(frozen=True)
class SwitchedProblem:
    """A switched optimal control problem over a finite discrete input set."""

    state_dim: int
    control_dim: int
    discrete_values: tuple
    form: DynamicsForm
    horizon: float
    initial_state: Array
    control_bounds: tuple[Array, Array] | None = None
    name: str = ""

    def __post_init__(self):
        if self.state_dim < 1:
            raise ConfigurationError("state_dim must be positive")
        if self.control_dim < 0:
            raise ConfigurationError("control_dim must be nonnegative")
        if not self.discrete_values:
            raise ConfigurationError("discrete value set must be nonempty")
        vals = [np.atleast_1d(np.asarray(v, dtype=float)) for v in self.discrete_values]
        for i in range(len(vals)):
            for j in range(i + 1, len(vals)):
                if vals[i].shape == vals[j].shape and np.array_equal(vals[i], vals[j]):
                    raise ConfigurationError(
                        f"discrete values must be pairwise distinct, got duplicates at {i}, {j}"
                    )
        if not self.horizon > 0:
            raise ConfigurationError("horizon must be strictly positive")
        x0 = np.asarray(self.initial_state, dtype=float)
        if x0.shape != (self.state_dim,):
            raise ConfigurationError(f"initial_state must have shape ({self.state_dim},)")
        object.__setattr__(self, "initial_state", x0)
        if self.control_bounds is not None:
            lb, ub = (np.asarray(b, dtype=float) for b in self.control_bounds)
            if lb.shape != (self.control_dim,) or ub.shape != (self.control_dim,):
                raise ConfigurationError("control bounds must match control_dim")
            object.__setattr__(self, "control_bounds", (lb, ub))

    @property
    def n_values(self) -> int:
        return len(self.discrete_values)

    def value(self, index: int):
        return self.discrete_values[index]

    def dynamics(self, x: Array, u: Array, v_index: int, t: float) -> Array:
        return self.form.rhs(x, u, self.discrete_values[v_index], t)

    def stage_cost(self, x: Array, u: Array, v_index: int, t: float) -> float:
        return self.form.cost(x, u, self.discrete_values[v_index], t)

    def terminal_cost(self, x: Array) -> float:
        return self.form.terminal(x)

    def scalar_values(self) -> Array:
        """The discrete values as a float vector; raises if any is non-scalar."""
        vals = []
        for v in self.discrete_values:
            arr = np.atleast_1d(np.asarray(v, dtype=float))
            if arr.size != 1:
                raise UnsupportedRelaxationError("discrete values are not scalars")
            vals.append(float(arr[0]))
        return np.array(vals)


@dataclass(frozen=True)
class MdtSpec:
    """Minimum dwell time bounds, one Δ per constrained discrete value index.

    Value indices absent from the map are unconstrained.  Construction
    enforces 0 < Δ < horizon for every entry; a Δ outside that range makes
    the scheduling problem vacuous or infeasible by construction.
    """

    per_value_delta: dict[int, float]
    horizon: float

    def __post_init__(self):
        object.__setattr__(self, "per_value_delta", dict(self.per_value_delta))
        for idx, delta in self.per_value_delta.items():
            if not (0.0 < delta < self.horizon):
                raise ConfigurationError(
                    f"dwell bound for value index {idx} must satisfy 0 < {delta} < {self.horizon}"
                )

    @classmethod
    def uniform(cls, delta: float, problem: SwitchedProblem) -> "MdtSpec":
        """One identical Δ on every discrete value (the benchmark setting)."""
        return cls({i: delta for i in range(problem.n_values)}, problem.horizon)

    def delta_for(self, value_index: int) -> float | None:
        return self.per_value_delta.get(value_index)

    @property
    def constrained_values(self) -> tuple[int, ...]:
        return tuple(sorted(self.per_value_delta))


@dataclass(frozen=True)
class RelaxedProblem:
    """A continuous relaxation of a switched problem.

    ``box_hull`` replaces the scalar discrete input by its interval hull, so
    the relaxed input is one bounded scalar channel.  ``outer_convexification``
    introduces one multiplier per discrete value, constrained to the unit
    simplex, and mixes the subsystem fields linearly.  Dwell-time bounds do
    not apply to either relaxation.
    """

    base: SwitchedProblem
    relaxation_kind: str

    def __post_init__(self):
        if self.relaxation_kind not in (BOX_HULL, OUTER_CONVEXIFICATION):
            raise UnsupportedRelaxationError(f"unknown relaxation kind {self.relaxation_kind!r}")
        if self.relaxation_kind == BOX_HULL:
            if self.base.form.rhs_v is None:
                raise UnsupportedRelaxationError(
                    "box_hull needs dynamics defined for continuous input values"
                )
            self.base.scalar_values()  # raises for vector-valued inputs

    @property
    def input_dim(self) -> int:
        """Number of relaxed input channels per time node."""
        return 1 if self.relaxation_kind == BOX_HULL else self.base.n_values

    def input_bounds(self) -> tuple[Array, Array]:
        if self.relaxation_kind == BOX_HULL:
            vals = self.base.scalar_values()
            return np.array([vals.min()]), np.array([vals.max()])
        n = self.base.n_values
        return np.zeros(n), np.ones(n)

    def simplex_constrained(self) -> bool:
        return self.relaxation_kind == OUTER_CONVEXIFICATION

    def initial_input(self) -> Array:
        if self.relaxation_kind == BOX_HULL:
            vals = self.base.scalar_values()
            return np.array([0.5 * (vals.min() + vals.max())])
        return np.full(self.base.n_values, 1.0 / self.base.n_values)


def relax(problem: SwitchedProblem, kind: str) -> RelaxedProblem:
    """Relax the discrete input; the result contains every discrete policy."""
    return RelaxedProblem(problem, kind)


def check_multipliers(alpha: Array, atol: float = 1e-9) -> bool:
    """True when every row of ``alpha`` lies on the unit simplex within tolerance."""
    a = np.atleast_2d(alpha)
    return bool(np.all(a >= -atol) and np.all(np.abs(a.sum(axis=1) - 1.0) <= atol))


# --------------------------------------------------------------------------
# Named dynamics forms
# --------------------------------------------------------------------------


def _double_tank() -> DynamicsForm:
    # Two gravity-drained tanks in series; the discrete input is the inflow
    # into the upper tank, the cost tracks a level of 3 in the lower tank.
    def rhs(x, u, v, t):
        s1, s2 = math.sqrt(x[0]), math.sqrt(x[1])
        return np.array([v - s1, s1 - s2])

    def rhs_x(x, u, v, t):
        d1, d2 = 0.5 / math.sqrt(x[0]), 0.5 / math.sqrt(x[1])
        return np.array([[-d1, 0.0], [d1, -d2]])

    return DynamicsForm(
        name="double_tank",
        rhs=rhs,
        rhs_x=rhs_x,
        rhs_u=lambda x, u, v, t: np.zeros((2, 0)),
        rhs_t=lambda x, u, v, t: np.zeros(2),
        rhs_v=lambda x, u, v, t: np.array([1.0, 0.0]),
        cost=lambda x, u, v, t: (x[1] - 3.0) ** 2,
        cost_x=lambda x, u, v, t: np.array([0.0, 2.0 * (x[1] - 3.0)]),
        cost_u=lambda x, u, v, t: np.zeros(0),
        cost_t=lambda x, u, v, t: 0.0,
        cost_v=lambda x, u, v, t: 0.0,
        terminal=lambda x: 0.0,
        terminal_x=lambda x: np.zeros(2),
    )


def _lotka_volterra() -> DynamicsForm:
    # Predator-prey dynamics with on/off fishing; costs penalize deviation of
    # both populations from the steady state (1, 1).
    c0, c1 = 0.4, 0.2

    def rhs(x, u, v, t):
        return np.array([
            x[0] - x[0] * x[1] - c0 * x[0] * v,
            -x[1] + x[0] * x[1] - c1 * x[1] * v,
        ])

    def rhs_x(x, u, v, t):
        return np.array([
            [1.0 - x[1] - c0 * v, -x[0]],
            [x[1], -1.0 + x[0] - c1 * v],
        ])

    return DynamicsForm(
        name="lotka_volterra",
        rhs=rhs,
        rhs_x=rhs_x,
        rhs_u=lambda x, u, v, t: np.zeros((2, 0)),
        rhs_t=lambda x, u, v, t: np.zeros(2),
        rhs_v=lambda x, u, v, t: np.array([-c0 * x[0], -c1 * x[1]]),
        cost=lambda x, u, v, t: (x[0] - 1.0) ** 2 + (x[1] - 1.0) ** 2,
        cost_x=lambda x, u, v, t: np.array([2.0 * (x[0] - 1.0), 2.0 * (x[1] - 1.0)]),
        cost_u=lambda x, u, v, t: np.zeros(0),
        cost_t=lambda x, u, v, t: 0.0,
        cost_v=lambda x, u, v, t: 0.0,
        terminal=lambda x: 0.0,
        terminal_x=lambda x: np.zeros(2),
    )


def _van_der_pol() -> DynamicsForm:
    # Oscillator whose damping coefficient is the discrete input; the cost
    # drives the state to the origin.
    def rhs(x, u, v, t):
        return np.array([x[1], v * (1.0 - x[0] ** 2) * x[1] - x[0]])

    def rhs_x(x, u, v, t):
        return np.array([
            [0.0, 1.0],
            [-2.0 * v * x[0] * x[1] - 1.0, v * (1.0 - x[0] ** 2)],
        ])

    return DynamicsForm(
        name="van_der_pol",
        rhs=rhs,
        rhs_x=rhs_x,
        rhs_u=lambda x, u, v, t: np.zeros((2, 0)),
        rhs_t=lambda x, u, v, t: np.zeros(2),
        rhs_v=lambda x, u, v, t: np.array([0.0, (1.0 - x[0] ** 2) * x[1]]),
        cost=lambda x, u, v, t: x[0] ** 2 + x[1] ** 2,
        cost_x=lambda x, u, v, t: np.array([2.0 * x[0], 2.0 * x[1]]),
        cost_u=lambda x, u, v, t: np.zeros(0),
        cost_t=lambda x, u, v, t: 0.0,
        cost_v=lambda x, u, v, t: 0.0,
        terminal=lambda x: 0.0,
        terminal_x=lambda x: np.zeros(2),
    )


def _tracking_double_integrator() -> DynamicsForm:
    # Double integrator driven by a discrete acceleration; the position must
    # track the reference 0.5*sin(t) + 1.
    def ref(t):
        return 0.5 * math.sin(t) + 1.0

    def rhs(x, u, v, t):
        return np.array([x[1], float(v)])

    return DynamicsForm(
        name="tracking_double_integrator",
        rhs=rhs,
        rhs_x=lambda x, u, v, t: np.array([[0.0, 1.0], [0.0, 0.0]]),
        rhs_u=lambda x, u, v, t: np.zeros((2, 0)),
        rhs_t=lambda x, u, v, t: np.zeros(2),
        rhs_v=lambda x, u, v, t: np.array([0.0, 1.0]),
        cost=lambda x, u, v, t: (x[0] - ref(t)) ** 2,
        cost_x=lambda x, u, v, t: np.array([2.0 * (x[0] - ref(t)), 0.0]),
        cost_u=lambda x, u, v, t: np.zeros(0),
        cost_t=lambda x, u, v, t: 2.0 * (x[0] - ref(t)) * (-0.5 * math.cos(t)),
        cost_v=lambda x, u, v, t: 0.0,
        terminal=lambda x: 0.0,
        terminal_x=lambda x: np.zeros(2),
    )


FORMS: dict[str, Callable[[], DynamicsForm]] = {
    "double_tank": _double_tank,
    "lotka_volterra": _lotka_volterra,
    "van_der_pol": _van_der_pol,
    "tracking_double_integrator": _tracking_double_integrator,
}


# --------------------------------------------------------------------------
# Benchmark configuration file
# --------------------------------------------------------------------------


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def load_benchmark_table(path=None) -> dict[str, dict]:
    """Parse the benchmark data file into raw per-problem dictionaries."""
    parser = configparser.ConfigParser()
    if path is None:
        payload = resources.files("dwellopt").joinpath("benchmarks.ini").read_text()
        parser.read_string(payload)
    else:
        with open(path) as handle:
            parser.read_file(handle)
    table = {}
    for section in parser.sections():
        raw = parser[section]
        try:
            table[section] = {
                "dynamics": raw["dynamics"].strip(),
                "state_dim": raw.getint("state_dim"),
                "control_dim": raw.getint("control_dim"),
                "values": _parse_floats(raw["values"]),
                "t_f": raw.getfloat("t_f"),
                "x0": _parse_floats(raw["x0"]),
                "delta": raw.getfloat("delta"),
                "master": _parse_floats(raw["master"]),
                "source": raw.get("source", "").strip(),
            }
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(f"malformed benchmark entry [{section}]: {exc}") from exc
    return table


def benchmark_names() -> tuple[str, ...]:
    return tuple(sorted(load_benchmark_table()))


def make_benchmark(name: str) -> tuple[SwitchedProblem, tuple[int, ...], MdtSpec]:
    """Build a named benchmark: the problem, its master sequence, and its Δ.

    The master sequence is returned as a tuple of 0-based indices into
    ``problem.discrete_values``; the dwell bound applies to every value.
    """
    table = load_benchmark_table()
    if name not in table:
        raise ConfigurationError(f"unknown benchmark {name!r}; available: {sorted(table)}")
    entry = table[name]
    if entry["dynamics"] not in FORMS:
        raise ConfigurationError(f"unknown dynamics form {entry['dynamics']!r} in [{name}]")
    form = FORMS[entry["dynamics"]]()
    problem = SwitchedProblem(
        state_dim=entry["state_dim"],
        control_dim=entry["control_dim"],
        discrete_values=tuple(entry["values"]),
        form=form,
        horizon=entry["t_f"],
        initial_state=np.array(entry["x0"]),
        name=name,
    )
    value_index = {v: i for i, v in enumerate(entry["values"])}
    try:
        master = tuple(value_index[v] for v in entry["master"])
    except KeyError as exc:
        raise ConfigurationError(f"master sequence of [{name}] uses value {exc} not in set")
    mdt = MdtSpec.uniform(entry["delta"], problem)
    return problem, master, mdt
