"""Relative value iteration for the uniformized average-cost MDP.

Two variants share one loop structure: :func:`rvi_solve` evaluates the
argmin in every state, :func:`threshold_rvi_solve` sweeps each
pre-identification branch in ascending TAoI and, once a transmit decision
has been found, lets every larger TAoI of that branch inherit it without a
minimization.  Both update synchronously from the previous iterate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .model import (
    Action,
    State,
    SystemParams,
    cost_vectors,
    derive,
    state_index,
    transition_matrix,
)
from .policy import Policy, from_table


class NotThresholdStructured(ValueError):
    """A policy table is not monotone in the TAoI for some pre-identification bit."""


@dataclass(frozen=True)
class SolveOptions:
    epsilon: float | None = None  # defaults to params.epsilon
    lambda_bar: float | None = None  # defaults to params.lambda_bar
    max_iterations: int = 20_000
    reference_state: State | None = None  # defaults to (t_u, 0)
    norm: str = "sup"  # or "span"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.norm not in ("sup", "span"):
            raise ValueError(f"unknown convergence norm {self.norm!r}")


@dataclass(frozen=True, eq=False)
class ValueTable:
    """Relative values ``h`` and state values ``v``, both shaped (delta_cap, 2)."""

    h: np.ndarray
    v: np.ndarray

    def __getitem__(self, s) -> float:
        delta, f = s
        return float(self.h[delta - 1, f])


@dataclass(eq=False)
class SolveResult:
    policy: Policy
    thresholds: tuple[float, float] | None
    v_star: float
    h: ValueTable
    iterations: int
    min_ops: int
    converged: bool
    solver: str = "rvi"
    history: list[int] = field(default_factory=list, repr=False)  # argmins per iteration


class _Kernel:
    """Per-action costs, rates and kernels shared by both solvers."""

    def __init__(self, params: SystemParams, options: SolveOptions):
        self.params = params
        self.derived = derive(params)
        self.eps = params.epsilon if options.epsilon is None else options.epsilon
        if not 0 < self.eps <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        self.lam = params.lambda_bar if options.lambda_bar is None else options.lambda_bar
        ref = options.reference_state or State(params.t_u, 0)
        self.ref = state_index(*ref)
        self.cost = cost_vectors(params, uniformized=True)
        self.mats = [transition_matrix(params, a, self.derived) for a in Action]
        self.rates = [self.eps / 1, self.eps / params.t_u]

    def q_values(self, h: np.ndarray) -> np.ndarray:
        # sum_s' pbar(s'|s,a) h(s') = rate*(P h)(s) + (1 - rate)*h(s), self-loops included
        cols = [
            self.cost[:, a] + r * (m @ h) + (1 - r) * h
            for a, (m, r) in enumerate(zip(self.mats, self.rates))
        ]
        return np.column_stack(cols)

    def change(self, new: np.ndarray, old: np.ndarray, norm: str) -> float:
        d = new - old
        if norm == "span":
            return float(d.max() - d.min())
        return float(np.abs(d).max())


def _finish(k: _Kernel, name, acts, h, v, it, ops, converged, history) -> SolveResult:
    cap = k.params.delta_cap
    table = acts.reshape(cap, 2).astype(np.int8)
    policy = from_table(table)
    try:
        omegas = extract_thresholds(policy)
    except NotThresholdStructured:
        omegas = None
    if omegas is not None and all(math.isinf(o) for o in omegas):
        omegas = None
    return SolveResult(
        policy=policy,
        thresholds=omegas,
        v_star=float(v[k.ref]),
        h=ValueTable(h.reshape(cap, 2).copy(), v.reshape(cap, 2).copy()),
        iterations=it,
        min_ops=ops,
        converged=converged,
        solver=name,
        history=history,
    )


def rvi_solve(params: SystemParams, options: SolveOptions | None = None) -> SolveResult:
    """Plain relative value iteration; one argmin per state per iteration.

    Ties between the two actions resolve to idle.
    """
    options = options or SolveOptions()
    k = _Kernel(params, options)
    n = params.n_states
    h = np.zeros(n)
    v = np.zeros(n)
    acts = np.zeros(n, dtype=bool)
    ops, history, converged, it = 0, [], False, 0
    for it in range(1, options.max_iterations + 1):
        q = k.q_values(h)
        acts = q[:, 1] < q[:, 0]
        v = np.where(acts, q[:, 1], q[:, 0])
        h_new = v - v[k.ref]
        ops += n
        history.append(n)
        diff = k.change(h_new, h, options.norm)
        h = h_new
        if diff < k.lam:
            converged = True
            break
    return _finish(k, "rvi", acts, h, v, it, ops, converged, history)


def threshold_rvi_solve(params: SystemParams, options: SolveOptions | None = None) -> SolveResult:
    """Relative value iteration exploiting the threshold structure in the TAoI.

    Within each sweep the thresholds start at infinity; states at or beyond
    a branch's current threshold are assigned Transmit without evaluating
    the minimization, and ``min_ops`` counts only the minimizations run.
    """
    options = options or SolveOptions()
    k = _Kernel(params, options)
    cap, n = params.delta_cap, params.n_states
    t_u = params.t_u
    d = k.derived
    g = d.g
    r0, r1 = k.rates
    # per-branch transition weights (reset to t_u on success, otherwise climb)
    ok = (d.p_hat_b * d.p_succ, (1 - d.p_hat_a) * d.p_succ)
    fail = (d.p_fail_0, d.p_fail_1)
    reset1, reset0 = state_index(t_u, 1), state_index(t_u, 0)
    half = (t_u - 1) / 2

    h = [0.0] * n
    v = [0.0] * n
    acts = [False] * n
    ops, history, converged, it = 0, [], False, 0
    for it in range(1, options.max_iterations + 1):
        omega = [math.inf, math.inf]
        count = 0
        hr1, hr0 = h[reset1], h[reset0]
        for delta in range(1, cap + 1):
            up1 = 2 * (min(delta + t_u, cap) - 1)
            step1 = 2 * (min(delta + 1, cap) - 1)
            climb = g * h[up1 + 1] + (1 - g) * h[up1]
            reset = g * hr1 + (1 - g) * hr0
            for f in (0, 1):
                s = 2 * (delta - 1) + f
                q1 = delta + half + r1 * (ok[f] * reset + fail[f] * climb) + (1 - r1) * h[s]
                if delta >= omega[f]:
                    acts[s] = True
                    v[s] = q1
                    continue
                q0 = delta + r0 * (g * h[step1 + 1] + (1 - g) * h[step1]) + (1 - r0) * h[s]
                count += 1
                if q1 < q0:
                    acts[s] = True
                    v[s] = q1
                    omega[f] = delta
                else:
                    acts[s] = False
                    v[s] = q0
        ops += count
        history.append(count)
        vr = v[k.ref]
        h_new = [x - vr for x in v]
        diff = k.change(np.asarray(h_new), np.asarray(h), options.norm)
        h = h_new
        if diff < k.lam:
            converged = True
            break
    return _finish(
        k,
        "threshold_rvi",
        np.asarray(acts),
        np.asarray(h),
        np.asarray(v),
        it,
        ops,
        converged,
        history,
    )


def extract_thresholds(policy: Policy | np.ndarray) -> tuple[float, float]:
    """Smallest transmitting TAoI per pre-identification bit (``inf`` if none).

    Raises :class:`NotThresholdStructured` when some branch idles above a
    transmitting TAoI.
    """
    if isinstance(policy, Policy):
        if policy.kind != "table":
            return (policy.omega0, policy.omega1)
        table = policy.table
    else:
        table = np.asarray(policy)
    out = []
    for f in (0, 1):
        col = table[:, f].astype(bool)
        hits = np.flatnonzero(col)
        if hits.size == 0:
            out.append(math.inf)
            continue
        first = int(hits[0])
        if not col[first:].all():
            bad = first + int(np.flatnonzero(~col[first:])[0]) + 1
            raise NotThresholdStructured(
                f"branch f={f} transmits at delta={first + 1} but idles at delta={bad}"
            )
        out.append(first + 1)
    return tuple(out)


def _policy_rows(policy: Policy, params: SystemParams) -> np.ndarray:
    return policy.as_table(params.delta_cap).reshape(-1).astype(bool)


def evaluate_policy_exact(policy: Policy, params: SystemParams) -> float:
    """Long-run average TAoI per slot of ``policy`` on the finite SMDP chain.

    Solves for the stationary law of the embedded decision-epoch chain on
    its unique closed class and returns the renewal-reward ratio
    ``sum(pi * cost) / sum(pi * slots)``.
    """
    derived = derive(params)
    acts = _policy_rows(policy, params)
    p_idle = transition_matrix(params, Action.IDLE, derived)
    p_tx = transition_matrix(params, Action.TRANSMIT, derived)
    sel = sparse.diags(acts.astype(float))
    chain = (sparse.diags(1.0 - acts) @ p_idle + sel @ p_tx).tocsr()
    chain.eliminate_zeros()

    pi, members = stationary_closed_class(chain)
    costs = cost_vectors(params, uniformized=False)
    cost = np.where(acts, costs[:, 1], costs[:, 0])[members]
    slots = np.where(acts, params.t_u, 1)[members]
    return float(pi @ cost / (pi @ slots))


def stationary_closed_class(chain: sparse.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    """Stationary vector of the single closed class of ``chain`` and its state indices."""
    ncomp, labels = csgraph.connected_components(chain, directed=True, connection="strong")
    coo = chain.tocoo()
    leaving = labels[coo.row] != labels[coo.col]
    open_comp = np.zeros(ncomp, dtype=bool)
    open_comp[labels[coo.row[leaving]]] = True
    closed = np.flatnonzero(~open_comp)
    if closed.size != 1:
        raise ValueError(f"induced chain has {closed.size} recurrent classes, expected 1")
    members = np.flatnonzero(labels == closed[0])
    sub = chain[members][:, members].toarray()
    m = len(members)
    a = sub.T - np.eye(m)
    a[-1, :] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    return pi, members


@dataclass
class StructureReport:
    monotone: bool
    concave: bool
    f_ordering: bool
    monotone_violations: list = field(default_factory=list)
    concavity_violations: list = field(default_factory=list)
    ordering_violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.monotone and self.concave and self.f_ordering


def check_structure(h: ValueTable | np.ndarray, params: SystemParams, tol: float | None = None) -> StructureReport:
    """Diagnose monotonicity, concavity and the ordering in the pre-identification bit.

    Concavity is checked on TAoI values ``1..delta_cap - t_u``; the cap
    region is excluded.  ``tol`` absorbs the residual of a finite-tolerance
    solve and defaults to ``params.lambda_bar``.
    """
    tol = params.lambda_bar if tol is None else tol
    hv = h.h if isinstance(h, ValueTable) else np.asarray(h)
    mono, conc, order = [], [], []
    for f in (0, 1):
        col = hv[:, f]
        for i in np.flatnonzero(np.diff(col) < -tol):
            mono.append((int(i) + 1, f))
        interior = col[: params.delta_cap - params.t_u]
        for i in np.flatnonzero(np.diff(interior, 2) > tol):
            conc.append((int(i) + 2, f))
    sign = (1 - params.p_a) - params.p_b
    gap = hv[:, 1] - hv[:, 0]
    if abs(sign) < 1e-12:
        bad = np.flatnonzero(np.abs(gap) > tol)
    elif sign > 0:
        bad = np.flatnonzero(gap > tol)
    else:
        bad = np.flatnonzero(gap < -tol)
    order = [int(i) + 1 for i in bad]
    return StructureReport(not mono, not conc, not order, mono, conc, order)


def slope_bound_report(h: ValueTable, params: SystemParams, epsilon: float | None = None) -> dict:
    """Compare the per-unit slope of ``h`` with the transmit-action lower bound.

    The bound ``t_u / (epsilon * (1 - p1))`` is the one used with a
    transmission in the value-function argument; it is informational only.
    Returns per-branch bound, minimum observed slope and whether it holds.
    """
    eps = params.epsilon if epsilon is None else epsilon
    d = derive(params)
    out = {}
    for f, p1 in ((0, d.p_fail_0), (1, d.p_fail_1)):
        bound = math.inf if p1 >= 1 else params.t_u / (eps * (1 - p1))
        slope = float(np.diff(h.h[:, f]).min())
        out[f] = {"bound": bound, "min_slope": slope, "holds": slope >= bound}
    return out
