"""Batch front-end: ``taoi {solve,compare,single-threshold,simulate,presets}``.

Experiments are described by a flat YAML file, for example::

    t_u: 4
    q: 0.5
    p_u: 1.0
    p_a: 0.4
    p_b: 0.4
    sweep: t_u
    values: [1, 2, 3, 4]
    policies: [optimal, single_threshold, always_transmit, pre_identification]

Keys: t_u, q, p_u, p_a, p_b, preset, delta_cap, epsilon, lambda_bar,
max_iterations, sweep, values, policies, horizon_slots, replications,
warmup_slots, seed, omega_max, simulate, out, format.  ``sweep`` is one of
t_u, q, p_u, p_a, p_b or preset; ``values`` is an explicit list.  Command
line flags override the file.

Exit status: 0 on success, 2 for configuration errors, 3 when a value
iteration did not converge.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import yaml

from .model import SystemParams
from .policy import Policy, single_threshold
from .presets import PRESETS, get_preset
from .simulator import SimConfig, baseline, run
from .single_threshold import average_cost_j, search_threshold
from .solver import (
    SolveOptions,
    evaluate_policy_exact,
    extract_thresholds,
    rvi_solve,
    threshold_rvi_solve,
)

EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3

SWEEPABLE = ("t_u", "q", "p_u", "p_a", "p_b", "preset")
POLICIES = ("optimal", "single_threshold", "always_transmit", "pre_identification")
PARAM_KEYS = ("t_u", "q", "p_u", "p_a", "p_b", "delta_cap", "epsilon", "lambda_bar")
KNOWN_KEYS = set(PARAM_KEYS) | {
    "preset", "max_iterations", "sweep", "values", "policies", "horizon_slots",
    "replications", "warmup_slots", "seed", "omega_max", "simulate", "out", "format",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    base: SystemParams
    sweep: str | None = None
    values: list = field(default_factory=list)
    policies: tuple = POLICIES
    sim: SimConfig = field(default_factory=SimConfig)
    max_iterations: int = 20_000
    omega_max: int | None = None
    simulate: bool = False
    out: str | None = None
    format: str = "csv"

    def points(self) -> list[tuple[int, object, SystemParams]]:
        """(index, sweep value, parameters) for every sweep point."""
        if not self.sweep or not self.values:
            return [(0, None, self.base)]
        return [(i, v, apply_sweep(self.base, self.sweep, v)) for i, v in enumerate(self.values)]


def apply_sweep(base: SystemParams, name: str, value) -> SystemParams:
    if name == "preset":
        pre = get_preset(value)
        return replace(base, p_a=pre.p_a, p_b=pre.p_b)
    if name == "t_u":
        value = int(value)
        return replace(base, t_u=value, delta_cap=max(base.delta_cap, 2 * value))
    return replace(base, **{name: float(value)})


def _key_lines(text: str) -> dict[str, int]:
    node = yaml.compose(text)
    if node is None:
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text) or {}
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: {getattr(exc, 'problem', None) or exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: expected a mapping of key: value lines")

    def fail(key, msg):
        line = lines.get(key)
        raise ConfigError(f"{source}:{line}: {key}: {msg}" if line else f"{source}: {key}: {msg}")

    for key in raw:
        if key not in KNOWN_KEYS:
            fail(key, "unknown key")

    kw = {k: raw[k] for k in PARAM_KEYS if k in raw}
    if "preset" in raw:
        try:
            pre = get_preset(str(raw["preset"]))
        except KeyError as exc:
            fail("preset", exc.args[0])
        kw.update(p_a=pre.p_a, p_b=pre.p_b)
    for k in ("t_u", "q", "p_u", "p_a", "p_b"):
        if k not in kw and raw.get("sweep") != k and not (k in ("p_a", "p_b") and raw.get("sweep") == "preset"):
            fail(k, "missing required parameter")
    # swept parameters may be absent from the base; take the first sweep value
    sweep = raw.get("sweep")
    values = raw.get("values") or []
    if sweep is not None and sweep not in SWEEPABLE:
        fail("sweep", f"must be one of {', '.join(SWEEPABLE)}")
    if not isinstance(values, list):
        fail("values", "must be a list")
    if sweep and sweep != "preset" and sweep not in kw and values:
        kw[sweep] = values[0]
    if sweep == "preset" and values and "p_a" not in kw:
        try:
            first = get_preset(str(values[0]))
        except KeyError as exc:
            fail("values", exc.args[0])
        kw.update(p_a=first.p_a, p_b=first.p_b)
    try:
        base = SystemParams(**kw)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        culprit = next((k for k in kw if msg.startswith(k + " ")), next(iter(kw), "t_u"))
        fail(culprit, msg)

    cfg = ExperimentConfig(base=base, sweep=sweep, values=list(values))
    for i, v in enumerate(cfg.values):
        try:
            apply_sweep(base, sweep, v)
        except (TypeError, ValueError, KeyError) as exc:
            fail("values", f"entry {i} ({v!r}): {exc.args[0] if exc.args else exc}")

    if "policies" in raw:
        pols = raw["policies"]
        if not isinstance(pols, list) or any(p not in POLICIES for p in pols):
            fail("policies", f"must be a list drawn from {', '.join(POLICIES)}")
        cfg.policies = tuple(pols)
    try:
        cfg.sim = SimConfig(
            horizon_slots=int(raw.get("horizon_slots", SimConfig.horizon_slots)),
            replications=int(raw.get("replications", SimConfig.replications)),
            seed=int(raw.get("seed", 0)),
            warmup_slots=raw.get("warmup_slots"),
        )
    except (TypeError, ValueError) as exc:
        fail("horizon_slots", str(exc))
    for key in ("max_iterations", "omega_max"):
        if raw.get(key) is None:
            continue
        val = raw[key]
        if isinstance(val, bool) or not isinstance(val, int) or val < 1:
            fail(key, f"must be a positive integer, got {val!r}")
        setattr(cfg, key, val)
    if cfg.omega_max is not None and any(cfg.omega_max < pt.t_u for _, _, pt in cfg.points()):
        fail("omega_max", "must be at least t_u at every sweep point")
    cfg.simulate = bool(raw.get("simulate", False))
    cfg.out = raw.get("out")
    cfg.format = raw.get("format", "csv")
    if cfg.format not in ("csv", "json"):
        fail("format", "must be csv or json")
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, path)


def _omega(x) -> int | None:
    return int(x) if x is not None and math.isfinite(x) else None


def _base_row(cfg: ExperimentConfig, idx: int, value, params: SystemParams) -> dict:
    row = {"sweep": cfg.sweep or "", "index": idx, "value": "" if value is None else value}
    row.update({k: getattr(params, k) for k in PARAM_KEYS})
    row["seed"] = cfg.sim.seed
    return row


def _options(cfg: ExperimentConfig) -> SolveOptions:
    return SolveOptions(max_iterations=cfg.max_iterations)


# --- per-point jobs (module level so they can be sent to worker processes) ---

def _solve_point(cfg, idx, value, params):
    rows = []
    for fn in (rvi_solve, threshold_rvi_solve):
        res = fn(params, _options(cfg))
        om = res.thresholds or (math.inf, math.inf)
        row = _base_row(cfg, idx, value, params)
        row.update(
            solver=res.solver, omega0=_omega(om[0]), omega1=_omega(om[1]), v_star=res.v_star,
            iterations=res.iterations, min_ops=res.min_ops, converged=res.converged,
        )
        row["_policy"] = res.policy.to_dict(params.delta_cap)
        rows.append(row)
    return rows


def _policy_for(name: str, params: SystemParams, cfg: ExperimentConfig) -> tuple[Policy, bool]:
    if name == "optimal":
        res = threshold_rvi_solve(params, _options(cfg))
        return res.policy, res.converged
    if name == "single_threshold":
        return single_threshold(search_threshold(params, cfg.omega_max).omega_star), True
    return baseline(name), True


def _compare_point(cfg, idx, value, params, with_exact=True):
    rows = []
    for name in cfg.policies:
        pol, ok = _policy_for(name, params, cfg)
        st = run(cfg.sim, pol, params)
        row = _base_row(cfg, idx, value, params)
        try:
            om = extract_thresholds(pol)
        except ValueError:
            om = (None, None)
        row.update(policy=name, omega0=_omega(om[0]) if om[0] is not None else None,
                   omega1=_omega(om[1]) if om[1] is not None else None)
        if with_exact:
            row["exact"] = evaluate_policy_exact(pol, params)
        row.update(
            sim_mean=st.mean_taoi_per_slot, sim_ci95=st.ci95,
            per_epoch_mean_delta=st.per_epoch_mean_delta, per_epoch_ci95=st.per_epoch_ci95,
            epochs=st.epochs, transmissions=st.transmissions, successes=st.successes,
            replications=cfg.sim.replications, horizon_slots=cfg.sim.horizon_slots,
            converged=ok,
        )
        rows.append(row)
    return rows


def _simulate_point(cfg, idx, value, params):
    return _compare_point(cfg, idx, value, params, with_exact=False)


def _single_threshold_point(cfg, idx, value, params):
    res = search_threshold(params, cfg.omega_max)
    rows = []
    for omega in range(params.t_u, res.omega_max + 1):
        row = _base_row(cfg, idx, value, params)
        row.update(
            omega=omega, j=average_cost_j(omega, params), is_star=omega == res.omega_star,
            omega_star=res.omega_star, j_star=res.j_star, brent_omega=res.brent_omega,
            brent_agrees=res.brent_agrees,
        )
        if cfg.simulate:
            st = run(cfg.sim, single_threshold(omega), params)
            row.update(per_epoch_mean_delta=st.per_epoch_mean_delta, per_epoch_ci95=st.per_epoch_ci95)
        rows.append(row)
    return rows


JOBS = {
    "solve": _solve_point,
    "compare": _compare_point,
    "simulate": _simulate_point,
    "single-threshold": _single_threshold_point,
}


def run_command(command: str, cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    fn = JOBS[command]
    points = cfg.points()
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(fn, cfg, *pt) for pt in points]
            chunks = [f.result() for f in futures]  # ordered by sweep index
    else:
        chunks = [fn(cfg, *pt) for pt in points]
    return [row for chunk in chunks for row in chunk]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if not k.startswith("_") and k not in cols)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def to_json(command: str, cfg: ExperimentConfig, rows: list[dict]) -> str:
    out_rows = []
    for r in rows:
        r = {k.lstrip("_"): _json_safe(v) for k, v in r.items()}
        out_rows.append(r)
    doc = {
        "command": command,
        "base": asdict(cfg.base),
        "sweep": cfg.sweep,
        "values": cfg.values,
        "sim": {k: v for k, v in asdict(cfg.sim).items() if k != "initial_state"},
        "rows": out_rows,
    }
    return json.dumps(doc, indent=2, sort_keys=False)


def presets_rows() -> list[dict]:
    return [
        {"name": p.name, "vehicle_accuracy": p.vehicle_accuracy, "animal_accuracy": p.animal_accuracy,
         "p_a": p.p_a, "p_b": p.p_b}
        for p in PRESETS.values()
    ]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taoi", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "compare", "single-threshold", "simulate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, default=1)
    p = sub.add_parser("presets")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _write(text: str, out: str | None):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        rows = presets_rows()
        text = json.dumps(rows, indent=2) if args.format == "json" else to_csv(rows)
        _write(text, args.out)
        return 0
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.sim = replace(cfg.sim, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    fmt = args.format or cfg.format
    rows = run_command(args.command, cfg, jobs=max(1, args.jobs))
    text = to_json(args.command, cfg, rows) if fmt == "json" else to_csv(rows)
    _write(text, args.out or cfg.out)
    if any(r.get("converged") is False for r in rows):
        print("error: value iteration did not converge for some sweep points", file=sys.stderr)
        return EXIT_NONCONVERGED
    return 0


if __name__ == "__main__":
    sys.exit(main())
