"""Slot-level Monte-Carlo simulation of the pull-based monitoring loop.

Each decision step draws the relevance indicator, the device's
pre-identification result, asks the policy for an action and, on a
transmission, draws one Bernoulli(p_u) outcome per packet.  The bulk loop
is compiled with numba and consumes uniforms from the same stream, in the
same order, as :func:`step`; a run seeded identically reproduces the
Python stepper bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import Action, State, SystemParams, next_taoi, slot_count
from .policy import Policy, always_transmit, pre_identification

CHUNK = 1 << 16
Z95 = 1.959963984540054


@dataclass(frozen=True)
class SimConfig:
    horizon_slots: int = 200_000
    replications: int = 20
    seed: int = 0
    initial_state: State | None = None  # defaults to (t_u, 0)
    warmup_slots: int | None = None  # defaults to 5% of the horizon
    aggregate_channel: bool = False  # one Bernoulli(p_u**t_u) draw per transmission

    def __post_init__(self):
        if self.horizon_slots < 1 or self.replications < 1:
            raise ValueError("horizon_slots and replications must be positive")
        if self.warmup_slots is not None and not 0 <= self.warmup_slots < self.horizon_slots:
            raise ValueError("warmup_slots must lie in [0, horizon_slots)")

    @property
    def warmup(self) -> int:
        if self.warmup_slots is None:
            return self.horizon_slots // 20
        return self.warmup_slots


@dataclass(frozen=True)
class StepOutcome:
    y: int
    f: int
    a: Action
    b: int
    d: int
    slots_consumed: int
    cost: int
    next_delta: int


@dataclass(frozen=True)
class SimStats:
    mean_taoi_per_slot: float
    ci95: float
    epochs: int
    transmissions: int
    successes: int
    per_epoch_mean_delta: float
    per_epoch_ci95: float
    replications: int
    f1_rate: float
    d_rate: float  # successes per transmission


def baseline(name: str) -> Policy:
    if name == "always_transmit":
        return always_transmit()
    if name == "pre_identification":
        return pre_identification()
    raise ValueError(f"unknown baseline {name!r}")


def _draw_f(y: int, u: float, p_a: float, p_b: float) -> int:
    if y:
        return 0 if u < p_b else 1
    return 1 if u < p_a else 0


def step(state: State, policy: Policy, rng: np.random.Generator, params: SystemParams,
         aggregate_channel: bool = False) -> StepOutcome:
    """Advance one decision step from TAoI ``state.delta``.

    The pre-identification bit of ``state`` is not used: a fresh sample is
    captured and classified at the start of every step.
    """
    delta = state[0]
    y = int(rng.random() < params.q)
    f = _draw_f(y, rng.random(), params.p_a, params.p_b)
    a = Action(policy.action(delta, f))
    b = 0
    if a == Action.TRANSMIT:
        if aggregate_channel:
            b = int(rng.random() < params.p_u ** params.t_u)
        else:
            b = 1
            for _ in range(params.t_u):
                if rng.random() >= params.p_u:
                    b = 0
    d = b * y
    n = slot_count(a, params)
    return StepOutcome(
        y=y, f=f, a=a, b=b, d=d,
        slots_consumed=n,
        cost=n * delta + n * (n - 1) // 2,
        next_delta=next_taoi(delta, a, d, params),
    )


# accumulator layout shared by the kernel and run()
_COST, _SLOTS, _EPOCHS, _DSUM, _TX, _SUCC, _F1, _N = range(8)


@njit(cache=True)
def _advance(u, pos, st, acc, table, t_u, cap, q, p_a, p_b, p_u, p_succ,
             aggregate, warmup, horizon):
    """Run steps while enough uniforms remain; returns the new buffer position.

    ``st`` holds [delta, clock]; stepping stops once clock >= horizon.
    """
    need = 3 if aggregate else 2 + t_u
    n_rows = table.shape[0]
    delta = st[0]
    clock = st[1]
    while clock < horizon and pos + need <= u.shape[0]:
        y = 1 if u[pos] < q else 0
        uf = u[pos + 1]
        pos += 2
        if y == 1:
            f = 0 if uf < p_b else 1
        else:
            f = 1 if uf < p_a else 0
        row = delta if delta < n_rows else n_rows
        a = table[row - 1, f]
        b = 0
        if a == 1:
            if aggregate:
                b = 1 if u[pos] < p_succ else 0
                pos += 1
            else:
                b = 1
                for _ in range(t_u):
                    if u[pos] >= p_u:
                        b = 0
                    pos += 1
            n = t_u
        else:
            n = 1
        d = b * y
        if clock >= warmup:
            acc[_COST] += n * delta + n * (n - 1) // 2
            acc[_SLOTS] += n
            acc[_EPOCHS] += 1
            acc[_DSUM] += delta
            acc[_TX] += a
            acc[_SUCC] += d
            acc[_F1] += f
        if a == 1:
            if d == 1:
                delta = t_u
            else:
                delta = min(delta + t_u, cap)
        else:
            delta = min(delta + 1, cap)
        clock += n
    st[0] = delta
    st[1] = clock
    return pos


def simulate_replication(policy: Policy, params: SystemParams, rng: np.random.Generator,
                         horizon_slots: int, warmup_slots: int = 0, initial_delta: int | None = None,
                         aggregate_channel: bool = False) -> np.ndarray:
    """One independent run; returns the raw accumulator vector."""
    table = policy.lookup_table(params.delta_cap).astype(np.int64)
    st = np.array([initial_delta or params.t_u, 0], dtype=np.int64)
    acc = np.zeros(_N)
    buf = rng.random(CHUNK)
    pos = 0
    while True:
        pos = _advance(buf, pos, st, acc, table, params.t_u, params.delta_cap, params.q,
                       params.p_a, params.p_b, params.p_u, params.p_u ** params.t_u,
                       aggregate_channel, warmup_slots, horizon_slots)
        if st[1] >= horizon_slots:
            return acc
        buf = np.concatenate([buf[pos:], rng.random(CHUNK)])
        pos = 0


def replication_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent PCG64 streams keyed by (seed, replication index)."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def _mean_ci(x: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(x))
    if len(x) < 2:
        return m, math.nan
    return m, float(Z95 * np.std(x, ddof=1) / math.sqrt(len(x)))


def run(config: SimConfig, policy: Policy, params: SystemParams) -> SimStats:
    """Independent replications aggregated into a mean and a 95% normal CI."""
    init = config.initial_state[0] if config.initial_state is not None else params.t_u
    accs = np.array([
        simulate_replication(policy, params, rng, config.horizon_slots, config.warmup, init,
                             config.aggregate_channel)
        for rng in replication_rngs(config.seed, config.replications)
    ])
    per_slot = accs[:, _COST] / accs[:, _SLOTS]
    per_epoch = accs[:, _DSUM] / accs[:, _EPOCHS]
    m, ci = _mean_ci(per_slot)
    me, cie = _mean_ci(per_epoch)
    tot = accs.sum(axis=0)
    return SimStats(
        mean_taoi_per_slot=m,
        ci95=ci,
        epochs=int(tot[_EPOCHS]),
        transmissions=int(tot[_TX]),
        successes=int(tot[_SUCC]),
        per_epoch_mean_delta=me,
        per_epoch_ci95=cie,
        replications=config.replications,
        f1_rate=float(tot[_F1] / tot[_EPOCHS]),
        d_rate=float(tot[_SUCC] / tot[_TX]) if tot[_TX] else math.nan,
    )
