"""Command-line front end: batch runs, the validity matrix, and audits.

Subcommands:

* ``conebarrier run``      — simulate scenario configs (default: the packaged
  suite) and emit per-scenario trace CSVs, event and summary JSON, and
  plot-ready JSON. Exit 0 only when no run records a collision; 1 when one
  does; 2 on configuration errors (no partial outputs are written).
* ``conebarrier validity`` — print the barrier/model verdict matrix from the
  sampling probes, optionally writing it as JSON.
* ``conebarrier audit``    — run the suite plus the invariance, recovery,
  slip-angle and QP-against-grid checks and report machine-readable
  pass/fail lines; nonzero exit on any failure.

The output directory resolves from --out, then the CONEBARRIER_OUT
environment variable, then ./runs. Trace CSVs use '.' decimals, LF line
endings, a mandatory header and 17 significant digits so parsing one
reproduces the in-memory arrays bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .safety_filter import ConstraintRow, QpProblem, solve_multi_constraint
from .scenarios import (
    EXPECTED_BEHAVIORS,
    full_suite,
    load_configs,
    with_overrides,
)
from .sim import (
    ConfigError,
    ScenarioTrace,
    beta_smallness_audit,
    classify_behavior,
    invariance_audit,
    run_scenario,
)
from .validity import BARRIERS, MODELS, validity_probe, verdict_matrix

EMIT_KINDS = ("trace-csv", "events-json", "summary-json", "plotdata")

STATE_NAMES = {
    "unicycle": ("x_p", "y_p", "theta", "v", "omega"),
    "bicycle": ("x_p", "y_p", "theta", "v"),
    "pointmass": ("px", "py", "vx", "vy"),
}
INPUT_NAMES = {
    "unicycle": ("a", "alpha"),
    "bicycle": ("a", "beta"),
    "pointmass": ("ax", "ay"),
}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trace_csv_rows(trace: ScenarioTrace):
    """Header plus formatted rows for one trace."""
    cfg = trace.config
    n_obs = trace.h.shape[1]
    header = ["t"]
    header += [f"state_{n}" for n in STATE_NAMES[cfg.model]]
    header += [f"u_ref_{n}" for n in INPUT_NAMES[cfg.model]]
    header += [f"u_star_{n}" for n in INPUT_NAMES[cfg.model]]
    for k in range(n_obs):
        header += [f"h_{k}", f"psi_{k}", f"sep_{k}", f"in_range_{k}",
                   f"constrained_{k}", f"qp_active_{k}",
                   f"obs{k}_cx", f"obs{k}_cy", f"obs{k}_vx", f"obs{k}_vy"]
    header += ["event_collision", "event_degenerate_velocity",
               "event_infeasible", "event_saturation"]

    flag_cols = {"collision": set(), "degenerate_velocity": set(),
                 "infeasible": set(), "saturation": set()}
    for e in trace.events:
        if e.kind in flag_cols:
            idx = int(round(e.time / cfg.dt))
            if 0 <= idx < trace.t.shape[0]:
                flag_cols[e.kind].add(idx)

    rows = []
    for i in range(trace.t.shape[0]):
        row = [_fmt(trace.t[i])]
        row += [_fmt(v) for v in trace.states[i]]
        row += [_fmt(v) for v in trace.u_ref[i]]
        row += [_fmt(v) for v in trace.u_star[i]]
        for k in range(n_obs):
            row += [_fmt(trace.h[i, k]), _fmt(trace.psi[i, k]), _fmt(trace.sep[i, k]),
                    str(int(trace.in_range[i, k])), str(int(trace.constrained[i, k])),
                    str(int(trace.qp_active[i, k]))]
            row += [_fmt(trace.obstacle_centers[i, k, 0]), _fmt(trace.obstacle_centers[i, k, 1]),
                    _fmt(trace.obstacle_velocities[i, k, 0]), _fmt(trace.obstacle_velocities[i, k, 1])]
        row += [str(int(i in flag_cols[kind]))
                for kind in ("collision", "degenerate_velocity", "infeasible", "saturation")]
        rows.append(row)
    return header, rows


def write_trace_csv(trace: ScenarioTrace, path: Path) -> None:
    header, rows = trace_csv_rows(trace)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def parse_trace_csv(path) -> dict[str, np.ndarray]:
    """Read an emitted trace back into named float columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = [[] for _ in header]
        for row in reader:
            for j, cell in enumerate(row):
                cols[j].append(float(cell))
    return {name: np.array(col) for name, col in zip(header, cols)}


def _summary_payload(trace: ScenarioTrace) -> dict:
    payload = trace.summary()
    inv = invariance_audit(trace)
    payload["invariance"] = {
        "started_safe": inv.started_safe,
        "min_h": None if math.isnan(inv.min_h) else inv.min_h,
        "max_discrete_violation": inv.max_discrete_violation,
        "recovery_rate": inv.recovery_rate,
        "crossed_positive": inv.crossed_positive,
    }
    if trace.config.model == "bicycle":
        beta = beta_smallness_audit(trace)
        payload["beta_audit"] = {
            "max_abs_beta": beta.max_abs_beta,
            "max_divergence": beta.max_divergence,
            "path_length": beta.path_length,
            "divergence_ratio": beta.divergence_ratio,
            "flagged": beta.flagged,
        }
    if math.isnan(payload["min_h"]):
        payload["min_h"] = None
    return payload


def _plotdata_payload(trace: ScenarioTrace) -> dict:
    cfg = trace.config
    return {
        "name": cfg.name,
        "model": cfg.model,
        "t": trace.t.tolist(),
        "x": trace.states[:, 0].tolist(),
        "y": trace.states[:, 1].tolist(),
        "speed": trace.states[:, 3].tolist() if cfg.model != "pointmass"
                 else np.linalg.norm(trace.states[:, 2:4], axis=1).tolist(),
        "h": [np.where(np.isfinite(trace.h[:, k]), trace.h[:, k], None).tolist()
              for k in range(trace.h.shape[1])],
        "sep": [trace.sep[:, k].tolist() for k in range(trace.sep.shape[1])],
        "filter_active": trace.filter_active.astype(int).tolist(),
        "obstacles": [
            {
                "cx": trace.obstacle_centers[:, k, 0].tolist(),
                "cy": trace.obstacle_centers[:, k, 1].tolist(),
                "combined_radius": max(cfg.obstacles[k].semi_axes) + 0.5 * cfg.width,
            }
            for k in range(trace.h.shape[1])
        ],
    }


def _resolve_out(args) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("CONEBARRIER_OUT")
    return Path(env) if env else Path("runs")


def _emit(trace: ScenarioTrace, out_dir: Path, emit: set) -> None:
    name = trace.config.name
    if "trace-csv" in emit:
        write_trace_csv(trace, out_dir / f"{name}_trace.csv")
    if "events-json" in emit:
        payload = [
            {"kind": e.kind, "time": e.time, "obstacle": e.obstacle, "detail": e.detail}
            for e in trace.events
        ]
        (out_dir / f"{name}_events.json").write_text(json.dumps(payload, indent=2))
    if "summary-json" in emit:
        (out_dir / f"{name}_summary.json").write_text(
            json.dumps(_summary_payload(trace), indent=2))
    if "plotdata" in emit:
        (out_dir / f"{name}_plotdata.json").write_text(
            json.dumps(_plotdata_payload(trace), indent=2))


def _load_batch(args) -> list:
    if args.config:
        configs = load_configs(args.config)
    else:
        configs = list(full_suite().values())
    return [
        with_overrides(cfg, barrier=args.barrier, dt=args.dt, duration=args.duration)
        for cfg in configs
    ]


def cmd_run(args) -> int:
    try:
        configs = _load_batch(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = _resolve_out(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    emit = set(args.emit.split(",")) if args.emit else set(EMIT_KINDS[:3])
    unknown = emit - set(EMIT_KINDS)
    if unknown:
        print(f"config error: unknown emit kind(s) {sorted(unknown)}", file=sys.stderr)
        return 2

    any_collision = False
    for cfg in configs:
        trace = run_scenario(cfg)
        _emit(trace, out_dir, emit)
        summary = trace.summary()
        collided = not summary["collision_free"]
        any_collision = any_collision or collided
        print(f"{cfg.name}: behavior={summary['behavior']} "
              f"collision_free={summary['collision_free']} min_h={summary['min_h']}")
        if collided:
            print(f"{cfg.name}: collision recorded", file=sys.stderr)
    return 1 if any_collision else 0


def cmd_validity(args) -> int:
    if args.samples < 1000:
        print("config error: --samples must be at least 1000", file=sys.stderr)
        return 2
    out_dir = _resolve_out(args)
    if args.model or args.barrier:
        barrier = args.barrier or "c3bf"
        model = args.model or "unicycle"
        rows = []
        entry = {"barrier": barrier, "model": model,
                 "extension": (barrier, model) == ("c3bf", "pointmass")}
        for motion in ("static", "moving"):
            rep = validity_probe(barrier, model, motion, samples=args.samples, seed=args.seed)
            entry[motion] = rep.verdict
            entry[f"{motion}_report"] = rep.to_dict()
        rows.append(entry)
    else:
        rows = verdict_matrix(samples=args.samples, seed=args.seed)

    width = max(len(r["barrier"]) + len(r["model"]) for r in rows) + 4
    print(f"{'candidate / model':{width}s} {'static obstacle':32s} moving obstacle")
    for r in rows:
        tag = " (extension)" if r["extension"] else ""
        label = f"{r['barrier']} / {r['model']}{tag}"
        print(f"{label:{width}s} {r['static']:32s} {r['moving']}")
    if args.out or os.environ.get("CONEBARRIER_OUT"):
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "validity.json").write_text(json.dumps(rows, indent=2))
        print(f"wrote {out_dir / 'validity.json'}")
    return 0


def _grid_qp_reference(u_ref, rows, half_width=10.0, step=0.05):
    """Coarse brute-force projection used by the audit's QP cross-check."""
    ticks = np.arange(-half_width, half_width + step / 2, step)
    uu, vv = np.meshgrid(ticks, ticks, indexing="ij")
    pts = np.column_stack([uu.ravel(), vv.ravel()])
    feas = np.ones(pts.shape[0], dtype=bool)
    for lg, rhs in rows:
        feas &= pts @ np.asarray(lg) >= rhs - 1e-9
    if not np.any(feas):
        return None
    pts = pts[feas]
    d2 = np.sum((pts - np.asarray(u_ref)) ** 2, axis=1)
    return pts[int(np.argmin(d2))]


def _audit_checks(args) -> list[dict]:
    configs = _load_batch(args)
    traces = {cfg.name: run_scenario(cfg) for cfg in configs}
    checks = []

    names = set(traces)
    barrier_on = {n: tr for n, tr in traces.items() if tr.config.barrier != "none"}
    collided = sorted(n for n, tr in barrier_on.items() if tr.collided())
    checks.append({
        "name": "collision_free",
        "passed": not collided,
        "detail": f"collisions in {collided}" if collided else
                  f"{len(barrier_on)} barrier-enabled runs, zero collision events",
    })

    expected = {n: b for n, b in EXPECTED_BEHAVIORS.items() if n in names}
    if expected:
        got = {n: classify_behavior(traces[n]) for n in expected}
        bad = {n: (expected[n], got[n]) for n in expected if got[n] != expected[n]}
        checks.append({
            "name": "behavior_labels",
            "passed": not bad,
            "detail": f"mismatches {bad}" if bad else f"{len(expected)} labels match",
        })

    safe_start = {n: tr for n, tr in barrier_on.items()
                  if invariance_audit(tr).started_safe and np.any(np.isfinite(tr.h))}
    inv_ok = True
    details = []
    for n, tr in sorted(safe_start.items()):
        viol = max(0.0, -tr.min_h())
        ok = viol <= 1e-3
        half = run_scenario(with_overrides(tr.config, dt=tr.config.dt / 2))
        viol_half = max(0.0, -half.min_h())
        tightened = viol_half <= max(viol / 2, 1e-6)
        inv_ok = inv_ok and ok and tightened
        details.append(f"{n}: viol={viol:.2e} viol(dt/2)={viol_half:.2e}")
    checks.append({
        "name": "invariance_safe_start",
        "passed": inv_ok and bool(safe_start),
        "detail": "; ".join(details) if details else "no safe-start runs in batch",
    })

    recovery = {n: tr for n, tr in barrier_on.items() if "recovery" in n}
    rec_ok = bool(recovery)
    details = []
    for n, tr in sorted(recovery.items()):
        rep = invariance_audit(tr)
        gamma = rep.rate_target
        ok = (rep.recovery_rate is not None and rep.crossed_positive
              and abs(rep.recovery_rate - gamma) <= 0.3 * gamma)
        rec_ok = rec_ok and ok
        details.append(f"{n}: rate={rep.recovery_rate} target={gamma} "
                       f"crossed={rep.crossed_positive}")
    checks.append({
        "name": "violation_recovery",
        "passed": rec_ok,
        "detail": "; ".join(details) if details else "no recovery scenario in batch",
    })

    bikes = {n: tr for n, tr in barrier_on.items() if tr.config.model == "bicycle"}
    beta_ok = True
    details = []
    for n, tr in sorted(bikes.items()):
        rep = beta_smallness_audit(tr)
        ok = rep.max_abs_beta < 0.3 and rep.divergence_ratio < 0.05
        beta_ok = beta_ok and ok
        details.append(f"{n}: max|beta|={rep.max_abs_beta:.3f} "
                       f"divergence={100 * rep.divergence_ratio:.2f}%")
    checks.append({
        "name": "beta_smallness",
        "passed": beta_ok,
        "detail": "; ".join(details) if details else "no bicycle runs in batch",
    })

    if "braking_unicycle" in traces:
        neg = run_scenario(with_overrides(traces["braking_unicycle"].config, barrier="none"))
        checks.append({
            "name": "negative_control",
            "passed": neg.collided(),
            "detail": "unfiltered braking setup collides" if neg.collided()
                      else "unfiltered braking setup unexpectedly avoided collision",
        })

    rng = np.random.default_rng(args.seed)
    step = args.oracle_grid_step
    # Certification per instance: u* feasible, at least as good as the best
    # grid point, and tied to it through the projection inequality
    # |u_g - u*|^2 <= f(u_g) - f(u*), which only the exact projection obeys.
    worst_feas = 0.0
    worst_gap = -np.inf
    worst_proj = -np.inf
    slack_worst = 0.0
    evaluated = 0
    for _ in range(60):
        u_ref = rng.uniform(-3, 3, 2)
        rows = []
        for _ in range(rng.integers(1, 4)):
            ang = rng.uniform(0, 2 * np.pi)
            lg = np.array([np.cos(ang), np.sin(ang)])
            rows.append((lg, float(rng.uniform(-2, 2))))
        result = solve_multi_constraint(QpProblem(
            u_ref=u_ref, rows=tuple(ConstraintRow(lg, rhs) for lg, rhs in rows)))
        ref = _grid_qp_reference(u_ref, rows, step=step)
        if ref is None or result.status == "infeasible":
            continue
        if float(np.max(np.abs(result.u_star))) > 8.5:
            continue
        evaluated += 1
        for lg, rhs in rows:
            worst_feas = max(worst_feas, rhs - float(np.asarray(lg) @ result.u_star))
        f_star = float(np.sum((result.u_star - u_ref) ** 2))
        f_grid = float(np.sum((ref - u_ref) ** 2))
        worst_gap = max(worst_gap, f_star - f_grid)
        worst_proj = max(worst_proj,
                         float(np.sum((ref - result.u_star) ** 2)) - (f_grid - f_star))
        for j, (lg, rhs) in enumerate(rows):
            if j in result.active_set:
                slack_worst = max(slack_worst, abs(float(np.asarray(lg) @ result.u_star - rhs)))
    ok = (worst_feas <= 1e-9 and worst_gap <= 1e-9
          and worst_proj <= 4 * step**2 and slack_worst <= 1e-9)
    checks.append({
        "name": "qp_grid_oracle",
        "passed": ok and evaluated > 0,
        "detail": f"{evaluated} instances: max infeasibility={worst_feas:.2e}, "
                  f"objective vs grid={worst_gap:.2e}, projection residual={worst_proj:.2e}, "
                  f"max active residual={slack_worst:.2e}",
    })
    return checks


def cmd_audit(args) -> int:
    try:
        checks = _audit_checks(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['detail']}")
    passed = all(c["passed"] for c in checks)
    out_dir = _resolve_out(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"passed": passed, "checks": checks,
               "grid_step": args.oracle_grid_step, "seed": args.seed}
    (out_dir / "audit.json").write_text(json.dumps(payload, indent=2))
    print(f"wrote {out_dir / 'audit.json'}")
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conebarrier",
        description="Collision-cone barrier filtering: scenario runs, validity matrix, audits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate scenarios and emit traces")
    run_p.add_argument("--config", action="append", default=None,
                       help="YAML scenario file or directory (repeatable); "
                            "defaults to the packaged suite")
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--emit", default=None,
                       help="comma list of " + ",".join(EMIT_KINDS))
    run_p.add_argument("--dt", type=float, default=None, help="timestep override (s)")
    run_p.add_argument("--duration", type=float, default=None, help="duration override (s)")
    run_p.add_argument("--seed", type=int, default=0, help="seed for randomized suites")
    run_p.add_argument("--barrier", default=None,
                       help="barrier override: c3bf|ellipse|hocbf|none")
    run_p.set_defaults(func=cmd_run)

    val_p = sub.add_parser("validity", help="barrier/model verdict matrix")
    val_p.add_argument("--model", default=None, choices=MODELS)
    val_p.add_argument("--barrier", default=None, choices=BARRIERS)
    val_p.add_argument("--samples", type=int, default=10000)
    val_p.add_argument("--seed", type=int, default=0)
    val_p.add_argument("--out", default=None)
    val_p.set_defaults(func=cmd_validity)

    audit_p = sub.add_parser("audit", help="invariance, recovery, slip and QP checks")
    audit_p.add_argument("--config", action="append", default=None)
    audit_p.add_argument("--out", default=None)
    audit_p.add_argument("--dt", type=float, default=None)
    audit_p.add_argument("--duration", type=float, default=None)
    audit_p.add_argument("--seed", type=int, default=0)
    audit_p.add_argument("--barrier", default=None)
    audit_p.add_argument("--oracle-grid-step", type=float, default=0.05,
                         help="grid resolution of the QP cross-check")
    audit_p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
