"""System model: parameters, TAoI dynamics and the (uniformized) SMDP kernel.

States are pairs ``(delta, f)`` with ``1 <= delta <= delta_cap`` and
``f in {0, 1}``.  Flat arrays over the state space use the index
``2 * (delta - 1) + f``, i.e. ascending delta with ``f = 0`` before ``f = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

import numpy as np
from scipy import sparse


class Action(IntEnum):
    IDLE = 0
    TRANSMIT = 1


class State(NamedTuple):
    delta: int
    f: int


class TransitionEntry(NamedTuple):
    next: State
    prob: float


@dataclass(frozen=True)
class SystemParams:
    """Scalar inputs of the monitoring system.

    Attributes
    ----------
    t_u : int
        Packets (and slots) per transmission.
    q : float
        Probability that captured data is task relevant.
    p_u : float
        Per-packet delivery probability.
    p_a, p_b : float
        False-positive and false-negative rates of the device classifier.
    delta_cap : int
        Upper limit of the TAoI.
    epsilon : float
        Uniformization constant, ``0 < epsilon <= 1``.
    lambda_bar : float
        Convergence tolerance of the value iteration.
    """

    t_u: int
    q: float
    p_u: float
    p_a: float
    p_b: float
    delta_cap: int = 500
    epsilon: float = 1.0
    lambda_bar: float = 0.02

    def __post_init__(self):
        if int(self.t_u) != self.t_u or self.t_u < 1:
            raise ValueError(f"t_u must be a positive integer, got {self.t_u!r}")
        for name in ("q", "p_a", "p_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if not 0.0 < self.p_u <= 1.0:
            raise ValueError(f"p_u must lie in (0, 1], got {self.p_u!r}")
        if int(self.delta_cap) != self.delta_cap or self.delta_cap < 2 * self.t_u:
            raise ValueError(
                f"delta_cap must be an integer >= 2*t_u={2 * self.t_u}, got {self.delta_cap!r}"
            )
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon!r}")
        if not self.lambda_bar > 0:
            raise ValueError(f"lambda_bar must be positive, got {self.lambda_bar!r}")
        object.__setattr__(self, "t_u", int(self.t_u))
        object.__setattr__(self, "delta_cap", int(self.delta_cap))

    @property
    def n_states(self) -> int:
        return 2 * self.delta_cap


@dataclass(frozen=True)
class DerivedParams:
    g: float
    p_hat_a: float
    p_hat_b: float
    p_succ: float
    p_fail_1: float
    p_fail_0: float


def derive(params: SystemParams) -> DerivedParams:
    """Marginal and posterior probabilities implied by ``params``.

    A posterior conditioned on a zero-probability classifier output is
    reported as 0; the corresponding kernel rows carry no mass then.
    """
    q, p_a, p_b = params.q, params.p_a, params.p_b
    pos = (1 - q) * p_a + q * (1 - p_b)  # Pr(F=1)
    neg = (1 - q) * (1 - p_a) + q * p_b  # Pr(F=0)
    p_hat_a = (1 - q) * p_a / pos if pos > 0 else 0.0
    p_hat_b = q * p_b / neg if neg > 0 else 0.0
    p_succ = params.p_u ** params.t_u
    return DerivedParams(
        g=pos,
        p_hat_a=p_hat_a,
        p_hat_b=p_hat_b,
        p_succ=p_succ,
        p_fail_1=1 - p_succ + p_hat_a * p_succ,
        p_fail_0=1 - p_hat_b * p_succ,
    )


def slot_count(a: Action | int, params: SystemParams) -> int:
    return params.t_u if a == Action.TRANSMIT else 1


def next_taoi(delta: int, a: Action | int, d: int, params: SystemParams) -> int:
    if d and a != Action.TRANSMIT:
        raise ValueError("monitoring can only succeed on a transmission")
    if a == Action.TRANSMIT:
        if d:
            return params.t_u
        return min(delta + params.t_u, params.delta_cap)
    return min(delta + 1, params.delta_cap)


def smdp_cost(s: State, a: Action | int, params: SystemParams) -> int:
    """Sum of the per-slot TAoI over the step, ``L*delta + L*(L-1)/2``."""
    n = slot_count(a, params)
    return n * s[0] + n * (n - 1) // 2


def uniformized_cost(s: State, a: Action | int, params: SystemParams) -> float:
    return s[0] + (slot_count(a, params) - 1) / 2


def success_prob(f: int, derived: DerivedParams) -> float:
    """Probability that a transmission from a state with bit ``f`` resets the TAoI."""
    relevant = (1 - derived.p_hat_a) if f else derived.p_hat_b
    return relevant * derived.p_succ


def _merge(pairs) -> list[TransitionEntry]:
    out: dict[State, float] = {}
    for nxt, p in pairs:
        out[nxt] = out.get(nxt, 0.0) + p
    return [TransitionEntry(k, v) for k, v in out.items()]


def transition_distribution(
    s: State, a: Action | int, params: SystemParams, derived: DerivedParams | None = None
) -> list[TransitionEntry]:
    """Next-state distribution of the SMDP, duplicate targets merged."""
    derived = derived or derive(params)
    g = derived.g
    delta, f = s
    if a == Action.TRANSMIT:
        ok = success_prob(f, derived)
        fail = derived.p_fail_1 if f else derived.p_fail_0
        up = min(delta + params.t_u, params.delta_cap)
        pairs = [
            (State(params.t_u, 1), ok * g),
            (State(params.t_u, 0), ok * (1 - g)),
            (State(up, 1), fail * g),
            (State(up, 0), fail * (1 - g)),
        ]
    else:
        up = min(delta + 1, params.delta_cap)
        pairs = [(State(up, 1), g), (State(up, 0), 1 - g)]
    return _merge(pairs)


def uniformized_distribution(
    s: State,
    a: Action | int,
    params: SystemParams,
    derived: DerivedParams | None = None,
    epsilon: float | None = None,
) -> list[TransitionEntry]:
    eps = params.epsilon if epsilon is None else epsilon
    rate = eps / slot_count(a, params)
    s = State(*s)
    stay = 0.0
    out = []
    for nxt, p in transition_distribution(s, a, params, derived):
        if nxt == s:
            stay = p
        else:
            out.append(TransitionEntry(nxt, rate * p))
    out.append(TransitionEntry(s, 1 - rate * (1 - stay)))
    return out


def state_index(delta: int, f: int) -> int:
    return 2 * (delta - 1) + f


def states(params: SystemParams):
    for delta in range(1, params.delta_cap + 1):
        for f in (0, 1):
            yield State(delta, f)


def cost_vectors(params: SystemParams, uniformized: bool = True) -> np.ndarray:
    """Costs for every state (rows) and action (columns)."""
    delta = np.repeat(np.arange(1, params.delta_cap + 1, dtype=float), 2)
    t = params.t_u
    if uniformized:
        return np.column_stack([delta, delta + (t - 1) / 2])
    return np.column_stack([delta, t * delta + t * (t - 1) / 2])


def transition_matrix(
    params: SystemParams,
    a: Action | int,
    derived: DerivedParams | None = None,
    uniformized: bool = False,
    epsilon: float | None = None,
) -> sparse.csr_matrix:
    """Sparse kernel over the whole state space under the constant action ``a``.

    Vectorized counterpart of :func:`transition_distribution` /
    :func:`uniformized_distribution`.
    """
    derived = derived or derive(params)
    g = derived.g
    n = params.n_states
    cap = params.delta_cap
    delta = np.repeat(np.arange(1, cap + 1), 2)
    f = np.tile([0, 1], cap)
    src = np.arange(n)
    rows, cols, vals = [], [], []

    def add(dst_delta, dst_f, p):
        rows.append(src)
        cols.append(2 * (dst_delta - 1) + dst_f)
        vals.append(np.broadcast_to(p, (n,)).astype(float))

    if a == Action.TRANSMIT:
        ok = np.where(f == 1, (1 - derived.p_hat_a) * derived.p_succ, derived.p_hat_b * derived.p_succ)
        fail = np.where(f == 1, derived.p_fail_1, derived.p_fail_0)
        reset = np.full(n, params.t_u)
        up = np.minimum(delta + params.t_u, cap)
        add(reset, 1, ok * g)
        add(reset, 0, ok * (1 - g))
        add(up, 1, fail * g)
        add(up, 0, fail * (1 - g))
    else:
        up = np.minimum(delta + 1, cap)
        add(up, 1, g)
        add(up, 0, 1 - g)
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()  # duplicates are summed
    if not uniformized:
        return mat
    eps = params.epsilon if epsilon is None else epsilon
    rate = eps / slot_count(a, params)
    stay = mat.diagonal()
    mat = mat.tolil()
    mat.setdiag(0.0)
    mat = mat.tocsr() * rate
    mat = mat + sparse.diags(1 - rate * (1 - stay))
    return mat.tocsr()
