"""Exact average cost of the single-threshold policy on the aggregated chain.

With an unbounded TAoI the decision-epoch chain of the policy "transmit iff
delta >= omega" aggregates into levels of two states (one per
pre-identification bit).  Levels ``t_u .. omega-1`` are idle steps (block
A), levels ``omega, omega + t_u, ...`` are transmissions that either reset
to level ``t_u`` (block B) or climb one level (block C).  The stationary
law is ``phi_i = phi_head`` on the idle levels and ``phi_head @ C**(i-omega)``
on the transmitting ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .model import DerivedParams, SystemParams, derive

ONES = np.ones(2)


@dataclass(frozen=True, eq=False)
class DtmcBlocks:
    a_blk: np.ndarray
    b_blk: np.ndarray
    c_blk: np.ndarray


def build_blocks(params: SystemParams, derived: DerivedParams | None = None) -> DtmcBlocks:
    d = derived or derive(params)
    mix = np.array([1 - d.g, d.g])
    ok = np.array([d.p_hat_b * d.p_succ, (1 - d.p_hat_a) * d.p_succ])
    fail = np.array([d.p_fail_0, d.p_fail_1])
    return DtmcBlocks(
        a_blk=np.vstack([mix, mix]),
        b_blk=np.outer(ok, mix),
        c_blk=np.outer(fail, mix),
    )


def inv2(m: np.ndarray) -> np.ndarray:
    """Closed-form inverse of a 2x2 matrix."""
    (a, b), (c, d) = m
    det = a * d - b * c
    if det == 0:
        raise np.linalg.LinAlgError("singular 2x2 matrix")
    return np.array([[d, -b], [-c, a]]) / det


def _resolvent(blocks: DtmcBlocks) -> np.ndarray:
    return inv2(np.eye(2) - blocks.c_blk)


def phi_head(omega: float, blocks: DtmcBlocks, derived: DerivedParams, t_u: int) -> np.ndarray:
    """Stationary probability vector of the reset level ``t_u``."""
    if omega < t_u:
        raise ValueError(f"omega={omega} is below t_u={t_u}")
    mix = np.array([1 - derived.g, derived.g])
    denom = (omega - t_u) + mix @ _resolvent(blocks) @ ONES
    return mix / denom


def average_cost_j(omega: float, params: SystemParams, blocks: DtmcBlocks | None = None) -> float:
    """Mean TAoI at decision epochs under the single threshold ``omega``.

    Accepts real ``omega`` so that it can be searched continuously.
    """
    d = derive(params)
    blocks = blocks or build_blocks(params, d)
    t = params.t_u
    phi = phi_head(omega, blocks, d, t)
    r = _resolvent(blocks)
    idle = 0.5 * (omega**2 - omega - t**2 + t) * phi.sum()
    first = omega * (phi @ r @ ONES)
    climb = t * (phi @ blocks.c_blk @ r @ r @ ONES)
    return float(idle + first + climb)


def series_cost_j(omega: int, params: SystemParams, tol: float = 1e-18, max_terms: int = 10**7) -> tuple[float, float]:
    """Direct level-by-level summation of the epoch-average TAoI and total mass.

    Independent of the closed form: walks the levels, truncating once the
    remaining mass of a level falls below ``tol``.
    """
    d = derive(params)
    blocks = build_blocks(params, d)
    t = params.t_u
    phi = phi_head(omega, blocks, d, t)
    cost = 0.0
    mass = 0.0
    for i in range(t, omega):
        cost += phi.sum() * i
        mass += phi.sum()
    level = phi.copy()
    for k in range(max_terms):
        m = level.sum()
        cost += m * (omega + k * t)
        mass += m
        if m < tol:
            break
        level = level @ blocks.c_blk
    return cost, mass


@dataclass(frozen=True)
class ThresholdSearch:
    omega_star: int
    j_star: float
    brent_omega: float
    brent_agrees: bool
    omega_max: int


def default_omega_max(t_u: int) -> int:
    return t_u + 10 * t_u + 100


def j_curve(omegas, params: SystemParams, blocks: DtmcBlocks | None = None) -> np.ndarray:
    """Vectorized ``average_cost_j`` over an array of thresholds.

    Since ``phi_head`` is ``[1-g, g]`` scaled by ``1/(omega - t_u + s)``,
    J reduces to a scalar rational function of omega with two constants.
    """
    d = derive(params)
    blocks = blocks or build_blocks(params, d)
    t = params.t_u
    mix = np.array([1 - d.g, d.g])
    r = _resolvent(blocks)
    s = mix @ r @ ONES
    k = mix @ blocks.c_blk @ r @ r @ ONES
    w = np.asarray(omegas, dtype=float)
    return (0.5 * (w**2 - w - t**2 + t) + w * s + t * k) / (w - t + s)


def search_threshold(params: SystemParams, omega_max: int | None = None, scan: bool = True) -> ThresholdSearch:
    """Brent search of the relaxed cost on ``[t_u, omega_max]`` with integer refinement.

    The floor/ceil neighbours of the continuous minimizer are compared and,
    with ``scan`` set, every integer in the range is evaluated as a guard
    against a local minimum.  The smallest minimizer wins ties.
    """
    t = params.t_u
    omega_max = default_omega_max(t) if omega_max is None else int(omega_max)
    if omega_max < t:
        raise ValueError("omega_max must be >= t_u")
    blocks = build_blocks(params)

    def j(x):
        return float(j_curve(x, params, blocks))

    if omega_max == t:
        x = float(t)
    else:
        x = float(minimize_scalar(j, bounds=(t, omega_max), method="bounded",
                                  options={"xatol": 1e-6}).x)
    cands = sorted({max(t, math.floor(x)), min(omega_max, math.ceil(x))})
    best = min(cands, key=lambda o: (j(o), o))
    brent_best = best
    if scan:
        grid = np.arange(t, omega_max + 1)
        vals = j_curve(grid, params, blocks)
        jmin = vals.min()
        # ties within rounding resolve to the smallest threshold
        best = int(grid[np.flatnonzero(vals <= jmin + 1e-12 * max(1.0, abs(jmin)))[0]])
    return ThresholdSearch(best, average_cost_j(best, params, blocks), x, brent_best == best, omega_max)


def optimize_threshold(params: SystemParams, omega_max: int | None = None) -> tuple[int, float]:
    res = search_threshold(params, omega_max)
    return res.omega_star, res.j_star
