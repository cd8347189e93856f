"""Stationary deterministic transmission policies and their JSON form."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .model import Action

KINDS = ("always_transmit", "pre_identification", "single_threshold", "threshold_pair", "table")


@dataclass(frozen=True, eq=False)
class Policy:
    """Maps a state ``(delta, f)`` to an action.

    Threshold kinds transmit iff ``delta >= omega_f``; an infinite
    threshold means that branch never transmits.  ``table`` holds one row
    per delta (``table[delta - 1, f]``) and is only set for the ``table``
    kind.
    """

    kind: str
    omega0: float = math.inf
    omega1: float = math.inf
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "table":
            if self.table is None or self.table.ndim != 2 or self.table.shape[1] != 2:
                raise ValueError("table policy needs an array of shape (delta_cap, 2)")

    def action(self, delta: int, f: int) -> Action:
        if self.kind == "table":
            row = min(delta, len(self.table)) - 1
            return Action(int(self.table[row, f]))
        omega = self.omega1 if f else self.omega0
        return Action.TRANSMIT if delta >= omega else Action.IDLE

    __call__ = action

    def as_table(self, delta_cap: int) -> np.ndarray:
        """Actions for ``delta = 1..delta_cap`` as an int8 array of shape (delta_cap, 2)."""
        if self.kind == "table":
            if len(self.table) >= delta_cap:
                return np.asarray(self.table[:delta_cap], dtype=np.int8)
            pad = np.repeat(self.table[-1:], delta_cap - len(self.table), axis=0)
            return np.vstack([self.table, pad]).astype(np.int8)
        d = np.arange(1, delta_cap + 1)
        return np.column_stack([d >= self.omega0, d >= self.omega1]).astype(np.int8)

    def lookup_table(self, delta_cap: int) -> np.ndarray:
        """Shortest table whose last row applies to every larger delta."""
        if self.kind == "table":
            return self.as_table(delta_cap)
        finite = [o for o in (self.omega0, self.omega1) if math.isfinite(o)]
        n = int(max(finite)) if finite else 1
        return self.as_table(max(1, min(n, delta_cap)))

    def to_dict(self, delta_cap: int) -> dict:
        tab = self.as_table(delta_cap)
        return {
            "type": self.kind,
            "omega0": _omega_out(self.omega0) if self.kind != "table" else None,
            "omega1": _omega_out(self.omega1) if self.kind != "table" else None,
            "table": [[d + 1, f, int(tab[d, f])] for d in range(delta_cap) for f in (0, 1)],
        }

    def to_json(self, delta_cap: int, **kw) -> str:
        return json.dumps(self.to_dict(delta_cap), **kw)

    @classmethod
    def from_dict(cls, obj: dict) -> "Policy":
        kind = obj["type"]
        if kind == "table":
            rows = obj["table"]
            cap = max(r[0] for r in rows)
            tab = np.zeros((cap, 2), dtype=np.int8)
            for d, f, a in rows:
                tab[d - 1, f] = a
            return cls("table", table=tab)
        return cls(kind, _omega_in(obj.get("omega0")), _omega_in(obj.get("omega1")))

    @classmethod
    def from_json(cls, text: str) -> "Policy":
        return cls.from_dict(json.loads(text))


def _omega_out(omega: float):
    return int(omega) if math.isfinite(omega) else None


def _omega_in(value) -> float:
    return math.inf if value is None else value


def always_transmit() -> Policy:
    return Policy("always_transmit", 1, 1)


def pre_identification() -> Policy:
    return Policy("pre_identification", math.inf, 1)


def single_threshold(omega: int) -> Policy:
    return Policy("single_threshold", omega, omega)


def threshold_pair(omega0: float, omega1: float) -> Policy:
    return Policy("threshold_pair", omega0, omega1)


def from_table(table: np.ndarray) -> Policy:
    return Policy("table", table=np.asarray(table, dtype=np.int8))
