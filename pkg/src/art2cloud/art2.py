"""ART2 network for analog input patterns.

The network keeps two weight matrices (F1->F2 bottom-up and F2->F1
top-down), commits F2 nodes lazily, and runs the usual search cycle:
F1 stabilization, F2 competition, vigilance test, reset or resonance.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np

UNCLASSIFIED = -1


class Art2Error(Exception):
    """Base class for ART2 failures."""


class InvalidParams(Art2Error, ValueError):
    pass


class ZeroInputError(Art2Error, ValueError):
    """An F1 sublayer collapsed to the zero vector (undefined norm with e=0)."""


class ConvergenceError(Art2Error):
    def __init__(self, residual: float, iters: int):
        super().__init__(f"F1 did not stabilize after {iters} iterations (residual {residual:.3g})")
        self.residual = residual
        self.iters = iters


class CapacityError(Art2Error):
    pass


@dataclass(frozen=True)
class Art2Params:
    """Scalar constants of the network.

    Defaults are the published values a=10, b=10, c=0.1, d=0.9, e=0,
    theta=0.2. ``rho`` and ``etp`` have no published value.
    """

    a: float = 10.0
    b: float = 10.0
    c: float = 0.1
    d: float = 0.9
    e: float = 0.0
    theta: float = 0.2
    rho: float = 0.9
    etp: float = 1e-4
    max_f2_nodes: int = 100
    f1_max_iters: int = 500
    learning_rate: float = 1.0

    def __post_init__(self):
        checks = [
            (0.0 <= self.theta <= 1.0, "0 <= theta <= 1"),
            (0.0 <= self.rho <= 1.0, "0 <= rho <= 1"),
            (0.0 <= self.etp <= 1.0, "0 <= etp <= 1"),
            (0.0 < self.d < 1.0, "0 < d < 1"),
            (self.e >= 0.0, "e >= 0"),
            (self.a > 0 and self.b > 0 and self.c > 0, "a, b, c > 0"),
            (self.max_f2_nodes >= 1, "max_f2_nodes >= 1"),
            (self.f1_max_iters >= 1, "f1_max_iters >= 1"),
            (0.0 <= self.learning_rate <= 1.0, "0 <= learning_rate <= 1"),
        ]
        for ok, rule in checks:
            if not ok:
                raise InvalidParams(f"invalid ART2 parameters: violates {rule}")
        # only meaningful once d is known to be in (0, 1)
        if self.c * self.d / (1.0 - self.d) > 1.0 + 1e-12:
            raise InvalidParams("invalid ART2 parameters: violates c*d/(1-d) <= 1")

    def replace(self, **changes) -> "Art2Params":
        values = asdict(self)
        values.update(changes)
        return Art2Params(**values)


@dataclass
class F1State:
    w: np.ndarray
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r: Optional[np.ndarray] = None
    iterations: int = 0


@dataclass
class ClusterAssignment:
    node: int
    created: bool
    resets: int
    f1: Optional[F1State] = None

    @property
    def classified(self) -> bool:
        return self.node != UNCLASSIFIED


def activation(x, theta: float):
    """Noise-suppression nonlinearity of the V sublayer.

    Identity at and above ``theta``; below it, ``2*theta*x**2/(x**2+theta**2)``,
    which meets the identity branch continuously at ``x == theta``.
    Accepts scalars or arrays.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ValueError("activation is defined for x >= 0 only")
    if theta == 0:
        out = arr.copy()
    else:
        # scaled form of 2*theta*x^2/(x^2+theta^2); stays finite when theta^2 underflows
        t = np.minimum(arr, theta) / theta
        sq = t * t
        out = np.where(arr >= theta, arr, 2.0 * theta * sq / (1.0 + sq))
    if np.ndim(x) == 0:
        return float(out)
    return out


def _suppress(x: np.ndarray, theta: float) -> np.ndarray:
    # unchecked array form of `activation` for the F1 loop
    if theta == 0:
        return x.copy()
    t = np.minimum(x, theta) / theta
    sq = t * t
    out = (2.0 * theta) * sq / (1.0 + sq)
    np.copyto(out, x, where=x >= theta)
    return out


def _normalize(vec: np.ndarray, e: float, layer: str) -> np.ndarray:
    norm = math.sqrt(float(vec @ vec))
    if e + norm == 0.0:
        raise ZeroInputError(f"{layer} sublayer is all-zero; normalization undefined with e=0")
    return vec / (e + norm)


class Art2Network:
    """Mutable ART2 state: weights, committed-node count and parameters."""

    def __init__(self, params: Art2Params, m: int):
        if m < 1:
            raise ValueError("input dimension m must be >= 1")
        self.params = params
        self.m = int(m)
        self.committed = 0
        self._bottom_up = np.empty((0, self.m))
        self._top_down = np.empty((0, self.m))

    @property
    def init_bottom_up(self) -> float:
        return 0.5 * self.bottom_up_bound

    @property
    def bottom_up_bound(self) -> float:
        return 1.0 / ((1.0 - self.params.d) * math.sqrt(self.m))

    @property
    def bottom_up(self) -> np.ndarray:
        return self._bottom_up

    @property
    def top_down(self) -> np.ndarray:
        return self._top_down

    def copy(self) -> "Art2Network":
        other = Art2Network(self.params, self.m)
        other.committed = self.committed
        other._bottom_up = self._bottom_up.copy()
        other._top_down = self._top_down.copy()
        return other

    def commit_node(self) -> int:
        if self.committed >= self.params.max_f2_nodes:
            raise CapacityError(f"all {self.params.max_f2_nodes} F2 nodes are committed")
        bu = np.full((1, self.m), self.init_bottom_up)
        td = np.zeros((1, self.m))
        self._bottom_up = np.vstack([self._bottom_up, bu])
        self._top_down = np.vstack([self._top_down, td])
        self.committed += 1
        return self.committed - 1

    def prototype(self, node: int) -> np.ndarray:
        """Top-down row of ``node`` scaled back to the unit-norm u space."""
        return self._top_down[node] * (1.0 - self.params.d)

    # snapshots ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "params": asdict(self.params),
            "committed": self.committed,
            "bottom_up": self._bottom_up.tolist(),
            "top_down": self._top_down.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Art2Network":
        net = cls(Art2Params(**doc["params"]), doc["m"])
        committed = int(doc["committed"])
        bu = np.asarray(doc["bottom_up"], dtype=float).reshape(committed, net.m)
        td = np.asarray(doc["top_down"], dtype=float).reshape(committed, net.m)
        if committed > net.params.max_f2_nodes:
            raise InvalidParams("snapshot has more nodes than max_f2_nodes")
        net.committed = committed
        net._bottom_up = bu
        net._top_down = td
        return net

    def dumps(self) -> str:
        # float repr is the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "Art2Network":
        return cls.from_dict(json.loads(text))


def new_network(params: Art2Params, m: int) -> Art2Network:
    return Art2Network(params, m)


def stabilize_f1(
    inputs,
    network: Art2Network,
    active_node: Optional[int] = None,
    params: Optional[Art2Params] = None,
) -> F1State:
    """Iterate the F1 sublayers until U stops moving by more than ``etp``.

    With ``active_node`` set, the node's top-down row feeds the P sublayer.
    """
    params = params or network.params
    I = np.asarray(inputs, dtype=float)
    if I.shape != (network.m,):
        raise ValueError(f"input has shape {I.shape}, expected ({network.m},)")
    if np.any(I < 0) or np.any(I > 1):
        raise ValueError("input entries must lie in [0, 1]")
    if not np.any(I):
        raise ZeroInputError("input pattern is all-zero")

    a, b, d, e, theta = params.a, params.b, params.d, params.e, params.theta
    feedback = None
    if active_node is not None:
        if not 0 <= active_node < network.committed:
            raise IndexError(f"node {active_node} is not committed")
        feedback = d * network.top_down[active_node]

    u = np.zeros(network.m)
    q = np.zeros(network.m)
    fq = np.zeros(network.m)
    residual = math.inf
    for it in range(1, params.f1_max_iters + 1):
        w = I + a * u
        x = _normalize(w, e, "W")
        v = _suppress(x, theta)
        if it > 1:
            v += b * fq
        u_new = _normalize(v, e, "V")
        p = u_new if feedback is None else u_new + feedback
        q = _normalize(p, e, "P")
        fq = _suppress(q, theta)
        residual = float(np.abs(u_new - u).max())
        u = u_new
        if it > 1 and residual <= params.etp:
            return F1State(w=w, x=x, v=v, u=u, p=p, q=q, iterations=it)
    raise ConvergenceError(residual, params.f1_max_iters)


def vigilance_residual(f1: F1State, params: Art2Params) -> float:
    """Norm of the R sublayer; 1 means a perfect match."""
    cp = params.c * f1.p
    denom = params.e + math.sqrt(float(f1.u @ f1.u)) + math.sqrt(float(cp @ cp))
    r = (f1.u + cp) / denom
    f1.r = r
    return math.sqrt(float(r @ r))


def reset_required(residual: float, params: Art2Params) -> bool:
    return params.rho / (params.e + residual) > 1.0


def f2_input(f1: F1State, network: Art2Network) -> np.ndarray:
    if network.committed == 0:
        raise Art2Error("F2 input requested from a network with no committed nodes")
    return network.bottom_up @ f1.p


def compete(t, disabled: Iterable[int] = ()) -> Optional[int]:
    """Winner-take-all over enabled nodes; ties go to the lowest index."""
    t = np.asarray(t, dtype=float)
    masked = t.copy()
    idx = [i for i in disabled if 0 <= i < t.size]
    if len(idx) == t.size:
        return None
    masked[idx] = -np.inf
    return int(np.argmax(masked))


def learn(network: Art2Network, winner: int, f1: F1State, rate: Optional[float] = None) -> None:
    if not 0 <= winner < network.committed:
        raise IndexError(f"winner {winner} out of range (committed={network.committed})")
    lam = network.params.learning_rate if rate is None else rate
    target = f1.u / (1.0 - network.params.d)
    network.bottom_up[winner] += lam * (target - network.bottom_up[winner])
    network.top_down[winner] += lam * (target - network.top_down[winner])


def match_state(base: F1State, network: Art2Network, node: int) -> F1State:
    """Single top-down pass of ``node`` over a bottom-up stabilized state.

    The vigilance test runs on this state, before F1 has had a chance to
    settle onto the prototype.
    """
    d, e = network.params.d, network.params.e
    p = base.u + d * network.top_down[node]
    q = _normalize(p, e, "P")
    return F1State(w=base.w, x=base.x, v=base.v, u=base.u, p=p, q=q, iterations=base.iterations)


def present(network: Art2Network, inputs, learning: bool = True) -> ClusterAssignment:
    """Run one full search/resonance cycle for ``inputs``.

    With ``learning=False`` the network is left untouched and an input that
    no committed node accepts comes back as ``UNCLASSIFIED``.
    """
    params = network.params
    I = np.asarray(inputs, dtype=float)
    base = stabilize_f1(I, network)
    disabled: set[int] = set()
    resets = 0

    if network.committed:
        t = f2_input(base, network)
        while True:
            winner = compete(t, disabled)
            if winner is None:
                break
            trial = match_state(base, network, winner)
            if reset_required(vigilance_residual(trial, params), params):
                disabled.add(winner)
                resets += 1
                continue
            if learning:
                # with the row at u/(1-d), F1 settles back on the bottom-up u, so
                # that u is where fast learning ends up; learn it directly
                learn(network, winner, trial)
            return ClusterAssignment(winner, False, resets, trial)

    if not learning:
        return ClusterAssignment(UNCLASSIFIED, False, resets, base)
    node = network.commit_node()
    # a fresh node has a zero top-down row, so F1 with it active is exactly `base`
    vigilance_residual(base, params)
    learn(network, node, base)
    return ClusterAssignment(node, True, resets, base)


def train(network: Art2Network, patterns, epochs: int = 1) -> list[int]:
    """Present every pattern ``epochs`` times; returns the final-epoch labels."""
    labels: list[int] = []
    for _ in range(epochs):
        labels = [present(network, p, learning=True).node for p in patterns]
    return labels


def classify(network: Art2Network, patterns) -> list[int]:
    return [present(network, p, learning=False).node for p in patterns]
