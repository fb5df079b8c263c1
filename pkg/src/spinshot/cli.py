"""Command-line interface: catalog-driven analyses with CSV/JSON output.

Every subcommand reads experiment parameters from a catalog file (the
bundled one by default), runs the corresponding library analysis and
writes a machine-readable report to stdout: JSON for single-point
results, CSV for tables and curves.  Numeric output is fixed at six
significant digits and ordering is deterministic, so repeated runs
produce byte-identical bytes.

Exit codes: 0 success, 2 unreadable or malformed input, 3 a validated
quantity violated a model invariant (including unknown experiment
names and bad ranges), 4 the computation itself was infeasible or did
not converge.  The environment variable SPINSHOT_THREADS caps the
thread pools of the numeric backends.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import electrical, fidelity, filters, initfid, montecarlo, sequencer, stc
from .experiments import (
    ExperimentRecord,
    ParseError,
    ValidationError,
    bundled_catalog,
    find_experiment,
    load_experiments,
)
from .models import (
    DegenerateModelError,
    DomainError,
    InfeasibleTargetError,
    QuadratureError,
    ReadoutPlan,
)

__all__ = ["main"]

_SEQ_OBJECTIVES = ("mean", "min-qubit", "weighted")


def _fmt(value: Optional[float]) -> str:
    """Six significant digits; empty cell for missing values."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return format(float(value), ".6g")


def _num(value: Optional[float]) -> Optional[float]:
    # JSON numbers rounded to the same six digits the CSVs use
    if value is None:
        return None
    return float(format(float(value), ".6g"))


def _emit_json(payload: Dict) -> None:
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _emit_csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)


def _apply_thread_cap() -> None:
    cap = os.environ.get("SPINSHOT_THREADS")
    if cap is None:
        return
    if not cap.isdigit() or int(cap) < 1:
        raise ValidationError(
            f"SPINSHOT_THREADS must be a positive integer, got {cap!r}"
        )
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(var, cap)


def _records(args: argparse.Namespace) -> List[ExperimentRecord]:
    return load_experiments(args.file)


def _pick(args: argparse.Namespace) -> ExperimentRecord:
    return find_experiment(_records(args), args.experiment)


def _published_report(rec: ExperimentRecord):
    """Fidelity breakdown at the reported operating point, if there is one."""
    plan = rec.published_plan
    if plan is None:
        return None
    return fidelity.evaluate(rec.tunnel, rec.detector, plan)


def _range_pair(text: str, name: str) -> Tuple[float, float]:
    sep = ":" if ":" in text else ","
    parts = text.split(sep)
    if len(parts) != 2:
        raise ValidationError(f"{name} must be LO:HI, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise ValidationError(f"{name} must be numeric LO:HI, got {text!r}") from None
    return lo, hi


# ---------------------------------------------------------------- evaluate


def _cmd_evaluate(args: argparse.Namespace) -> int:
    rec = _pick(args)
    t = args.t if args.t is not None else rec.readout_time
    if t is None:
        raise ValidationError(
            f"experiment {rec.name!r} reports no readout time; pass --t"
        )
    x = args.x if args.x is not None else rec.threshold
    if x is None:
        x = electrical.x_opt(rec.detector, rec.tunnel, ReadoutPlan(t, rec.detector.mu0))
    rep = fidelity.evaluate(rec.tunnel, rec.detector, ReadoutPlan(t, x))
    _emit_json(
        {
            "experiment": rec.name,
            "signal_unit": rec.signal_unit,
            "readout_time_s": _num(t),
            "threshold": _num(x),
            "f_stc0": _num(rep.f_stc0),
            "f_stc1": _num(rep.f_stc1),
            "v_stc": _num(rep.v_stc),
            "f_e0": _num(rep.f_e0),
            "f_e1": _num(rep.f_e1),
            "v_e": _num(rep.v_e),
            "f0": _num(rep.f0),
            "f1": _num(rep.f1),
            "f_m": _num(rep.f_m),
            "p_miss": _num(rep.p_miss),
            "provenance": {
                key: flag.render() for key, flag in sorted(rec.provenance.items())
            },
        }
    )
    return 0


# ---------------------------------------------------------------- optimize


_TABLE3_HEADER = (
    "experiment",
    "signal_unit",
    "t_opt_s",
    "x_opt",
    "v_stc_pct",
    "v_e_pct",
    "f_m_pct",
    "gain_pp",
)


def _optimized_row(rec: ExperimentRecord) -> List[str]:
    plan = rec.published_plan
    cands = [(plan.readout_time, plan.threshold)] if plan is not None else None
    t_best, x_best, rep = fidelity.optimize(
        rec.tunnel, rec.detector, candidates=cands, refine=False
    )
    gain = None
    base = _published_report(rec)
    if base is not None:
        gain = 100.0 * (rep.f_m - base.f_m)
    return [
        rec.name,
        rec.signal_unit,
        _fmt(t_best),
        _fmt(x_best),
        _fmt(100.0 * rep.v_stc),
        _fmt(100.0 * rep.v_e),
        _fmt(100.0 * rep.f_m),
        _fmt(gain),
    ]


def _cmd_optimize(args: argparse.Namespace) -> int:
    rec = _pick(args)
    _emit_csv(_TABLE3_HEADER, [_optimized_row(rec)])
    return 0


def _cmd_table3(args: argparse.Namespace) -> int:
    _emit_csv(_TABLE3_HEADER, [_optimized_row(rec) for rec in _records(args)])
    return 0


# ---------------------------------------------------------------- table2


def _cmd_table2(args: argparse.Namespace) -> int:
    rows = []
    for rec in _records(args):
        if rec.readout_time is None:
            raise ValidationError(
                f"experiment {rec.name!r} reports no readout time"
            )
        v_stc = float(stc.v_stc(rec.readout_time, rec.tunnel))
        rep = _published_report(rec)
        rows.append(
            [
                rec.name,
                rec.signal_unit,
                _fmt(rec.readout_time),
                _fmt(rec.threshold),
                _fmt(100.0 * v_stc),
                _fmt(100.0 * rep.v_e) if rep is not None else "",
                _fmt(100.0 * rep.f_m) if rep is not None else "",
            ]
        )
    _emit_csv(
        (
            "experiment",
            "signal_unit",
            "readout_time_s",
            "threshold",
            "v_stc_pct",
            "v_e_pct",
            "f_m_pct",
        ),
        rows,
    )
    return 0


# ---------------------------------------------------------------- sweeps


def _cmd_phase_diagram(args: argparse.Namespace) -> int:
    rec = _pick(args)
    gs = _range_pair(args.gs_range, "--gs-range")
    fc = _range_pair(args.fc_range, "--fc-range")
    grid = fidelity.phase_diagram(
        rec.tunnel, rec.detector, gs, fc, resolution=args.resolution
    )
    rows = []
    for i, g in enumerate(grid.gamma_s):
        for j, f in enumerate(grid.f_c):
            rows.append([_fmt(g), _fmt(f), _fmt(grid.f_m[i, j])])
    _emit_csv(("gamma_s_hz", "f_c_hz", "f_m"), rows)
    return 0


def _cmd_design_curve(args: argparse.Namespace) -> int:
    lo, hi = _range_pair(args.range, "--range")
    curve = fidelity.design_curve(
        args.ez_ratio, target_fm=args.target, d_prime=(lo, hi), num=args.points
    )
    rows = [
        [_fmt(d), _fmt(b), _fmt(g)]
        for d, b, g in zip(curve.d_prime, curve.boundary, curve.gamma_norm)
    ]
    _emit_csv(("d_prime", "min_t_out1_times_fc", "normalized_rate"), rows)
    return 0


# ---------------------------------------------------------------- init


def _cmd_init(args: argparse.Namespace) -> int:
    rec = _pick(args)
    tm = rec.tunnel
    t_i, t_cons = initfid.t_init(tm)
    closed = initfid.init_curves(tm, t_max=t_cons, num=101)
    full = initfid.init_curves_full(tm, t_max=t_cons, num=101)
    payload = {
        "experiment": rec.name,
        "t_i_s": _num(t_i),
        "t_i_conservative_s": _num(t_cons),
        "f_i_pct": _num(100.0 * full.f_i),
        "f_i_conservative_pct": _num(100.0 * full.f_i_conservative),
        "one_way_f_i_pct": _num(100.0 * closed.f_i),
        "one_way_f_i_conservative_pct": _num(100.0 * closed.f_i_conservative),
    }
    flag = rec.provenance.get("t_in1")
    if flag is not None and flag.kind != "measured":
        payload["note"] = (
            f"t_in1 is {flag.kind}; loading-time figures inherit that uncertainty"
        )
    _emit_json(payload)
    return 0


# ---------------------------------------------------------------- sequence


def _read_qubit_csv(path: str) -> Tuple[List[str], List[Tuple[float, float]], Optional[List[float]]]:
    try:
        fh = open(path, newline="")
    except OSError as err:
        raise ParseError(0, 0, f"cannot read {path}: {err}") from err
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, 1, f"{path} is empty") from None
        cols = [h.strip() for h in header]
        want = ["qubit", "measure_time_s", "relax_time_s"]
        if cols[: len(want)] != want or len(cols) > len(want) + 1 or (
            len(cols) == len(want) + 1 and cols[-1] != "weight"
        ):
            raise ParseError(
                1,
                1,
                f"{path} must start with columns {','.join(want)}"
                " and may add a final 'weight' column",
            )
        has_weight = len(cols) == len(want) + 1
        labels: List[str] = []
        qubits: List[Tuple[float, float]] = []
        weights: List[float] = []
        for row in reader:
            if not row or not any(cell.strip() for cell in row):
                continue
            if len(row) != len(cols):
                raise ParseError(
                    reader.line_num, 1, f"expected {len(cols)} fields, got {len(row)}"
                )
            labels.append(row[0].strip())
            try:
                qubits.append((float(row[1]), float(row[2])))
                if has_weight:
                    weights.append(float(row[3]))
            except ValueError:
                raise ParseError(
                    reader.line_num, 1, f"non-numeric entry in {row!r}"
                ) from None
    return labels, qubits, weights if has_weight else None


def _cmd_sequence(args: argparse.Namespace) -> int:
    labels, qubits, weights = _read_qubit_csv(args.file)
    if args.objective == "weighted" and weights is None:
        raise ValidationError("objective 'weighted' needs a weight column")
    best = sequencer.best_order(
        qubits,
        objective=args.objective,
        weights=weights if args.objective == "weighted" else None,
    )
    n = len(qubits)
    header = ["rank", "order", "objective_value", "score"] + [
        f"lambda_{i + 1}" for i in range(n)
    ]
    entries = best.ranking
    if entries is None:
        entries = ((best.order, best.objective_value),)
    rows = []
    for rank, (order, value) in enumerate(entries, start=1):
        sched = sequencer.make_schedule(
            qubits,
            order,
            objective=args.objective,
            weights=weights if args.objective == "weighted" else None,
        )
        rows.append(
            [
                str(rank),
                ">".join(labels[i] for i in order),
                _fmt(value),
                _fmt(sched.score),
            ]
            + [_fmt(v) for v in sched.lams]
        )
    _emit_csv(header, rows)
    return 0


# ---------------------------------------------------------------- simulate


def _analytic_cdfs(
    rec: ExperimentRecord, plan: ReadoutPlan
) -> Tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray], float]:
    det, tm = rec.detector, rec.tunnel
    f_s = 2.0 * det.filter_cutoff / det.sample_rate
    n_eff, _ = filters.correlation_correct(plan.samples(det), 1.0, f_s)
    miss = electrical.state_fidelities(plan.threshold, det, tm, plan)[2]

    def cdf0(xs: np.ndarray) -> np.ndarray:
        return np.asarray(electrical.c0(xs, det, n_eff))

    def cdf1(xs: np.ndarray) -> np.ndarray:
        # a missed blip leaves a quiet trace, so the observable maxima
        # follow the mixture, not the bare with-blip law
        bare = np.asarray(electrical.c1(xs, det, tm, plan))
        return (1.0 - miss) * bare + miss * cdf0(xs)

    return cdf0, cdf1, miss


def _ks_distance(maxima: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    s = np.sort(np.asarray(maxima, dtype=float))
    n = s.size
    f = np.clip(cdf(s), 0.0, 1.0)
    hi = np.max(np.arange(1, n + 1) / n - f)
    lo = np.max(f - np.arange(0, n) / n)
    return float(max(hi, lo))


def _cmd_simulate(args: argparse.Namespace) -> int:
    rec = _pick(args)
    plan = rec.published_plan
    if plan is None:
        if rec.readout_time is None:
            raise ValidationError(
                f"experiment {rec.name!r} reports no operating point to simulate"
            )
        x = electrical.x_opt(
            rec.detector, rec.tunnel, ReadoutPlan(rec.readout_time, rec.detector.mu0)
        )
        plan = ReadoutPlan(rec.readout_time, x)
    start = time.perf_counter()
    ens0 = montecarlo.simulate_traces(
        rec.tunnel, rec.detector, plan, 0, args.n, args.seed
    )
    ens1 = montecarlo.simulate_traces(
        rec.tunnel, rec.detector, plan, 1, args.n, args.seed
    )
    emp = montecarlo.empirical_fidelity((ens0, ens1), plan.threshold)
    cdf0, cdf1, miss = _analytic_cdfs(rec, plan)
    fe0, fe1, _ = electrical.state_fidelities(
        plan.threshold, rec.detector, rec.tunnel, plan
    )
    ks0 = _ks_distance(ens0.maxima, cdf0)
    ks1 = _ks_distance(ens1.maxima, cdf1)
    miss_se = math.sqrt(max(miss * (1.0 - miss), 1e-300) / args.n)
    miss_gap = (
        abs(ens1.miss_fraction - miss) / miss_se if miss_se > 0 else float("inf")
    )
    _emit_json(
        {
            "experiment": rec.name,
            "n_traces": args.n,
            "seed": args.seed,
            "readout_time_s": _num(plan.readout_time),
            "threshold": _num(plan.threshold),
            "analytic": {
                "f_e0": _num(fe0),
                "f_e1": _num(fe1),
                "v_e": _num(fe0 + fe1 - 1.0),
                "p_miss": _num(miss),
            },
            "empirical": {
                "f_e0": _num(emp.f_e0),
                "f_e1": _num(emp.f_e1),
                "v_e": _num(emp.v_e),
                "se_v_e": _num(emp.se_v_e),
                "p_miss": _num(ens1.miss_fraction),
            },
            "ks_state0": _num(ks0),
            "ks_state1": _num(ks1),
            "p_miss_sigma_distance": _num(miss_gap),
            "runtime_s": _num(time.perf_counter() - start),
        }
    )
    return 0


# ---------------------------------------------------------------- convergence


def _cmd_convergence(args: argparse.Namespace) -> int:
    rec = _pick(args)
    plan = rec.published_plan
    if plan is None:
        raise ValidationError(
            f"experiment {rec.name!r} reports no operating point; convergence "
            "tracks the estimator at the published one"
        )
    try:
        counts = [int(c) for c in args.counts.split(",")]
    except ValueError:
        raise ValidationError(
            f"--counts must be comma-separated integers, got {args.counts!r}"
        ) from None
    study = montecarlo.convergence_study(
        (rec.tunnel, rec.detector, plan),
        counts,
        repeats=args.repeats,
        bins=args.bins,
        seed=args.seed,
    )
    rows = [
        [
            str(n),
            _fmt(study.means[i]),
            _fmt(study.stds[i]),
            _fmt(study.residuals()[i]),
            _fmt(study.reference),
        ]
        for i, n in enumerate(study.counts)
    ]
    _emit_csv(
        (
            "n_traces",
            "mean_visibility",
            "std_visibility",
            "residual",
            "reference_visibility",
        ),
        rows,
    )
    return 0


# ---------------------------------------------------------------- wiring


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinshot",
        description="Single-shot spin readout fidelity analyses over an "
        "experiment catalog.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_catalog(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--file",
            default=str(bundled_catalog()),
            help="experiment catalog (default: bundled)",
        )

    def with_experiment(p: argparse.ArgumentParser) -> None:
        with_catalog(p)
        p.add_argument("--experiment", required=True, help="catalog entry name")

    p = sub.add_parser("evaluate", help="fidelity breakdown at one operating point")
    with_experiment(p)
    p.add_argument("--t", type=float, help="readout time in seconds")
    p.add_argument("--x", type=float, help="threshold in signal units")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("optimize", help="optimized operating point for one experiment")
    with_experiment(p)
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("table2", help="published-point comparison table (CSV)")
    with_catalog(p)
    p.set_defaults(func=_cmd_table2)

    p = sub.add_parser("table3", help="optimized comparison table (CSV)")
    with_catalog(p)
    p.set_defaults(func=_cmd_table3)

    p = sub.add_parser(
        "phase-diagram", help="optimized F_M over a rate/cutoff lattice (CSV)"
    )
    with_experiment(p)
    p.add_argument("--gs-range", required=True, help="sample-rate range LO:HI in Hz")
    p.add_argument("--fc-range", required=True, help="cutoff range LO:HI in Hz")
    p.add_argument("--resolution", type=int, default=8, help="points per axis")
    p.set_defaults(func=_cmd_phase_diagram)

    p = sub.add_parser(
        "design-curve", help="slowest admissible escape time vs separation (CSV)"
    )
    p.add_argument(
        "--ez-ratio", type=float, required=True, help="level splitting over k_B T"
    )
    p.add_argument("--target", type=float, default=0.99, help="target mean fidelity")
    p.add_argument("--range", default="3:8", help="separation range LO:HI")
    p.add_argument("--points", type=int, default=11, help="number of separations")
    p.set_defaults(func=_cmd_design_curve)

    p = sub.add_parser("init", help="initialization times and fidelities (JSON)")
    with_experiment(p)
    p.set_defaults(func=_cmd_init)

    p = sub.add_parser("sequence", help="multi-qubit measurement ordering (CSV)")
    p.add_argument("--file", required=True, help="CSV of qubit,measure_time_s,relax_time_s")
    p.add_argument(
        "--objective",
        default="mean",
        choices=_SEQ_OBJECTIVES,
        help="ordering objective",
    )
    p.set_defaults(func=_cmd_sequence)

    p = sub.add_parser(
        "simulate", help="Monte-Carlo cross-check of the analytic model (JSON)"
    )
    with_experiment(p)
    p.add_argument("--n", type=int, default=100000, help="traces per state")
    p.add_argument("--seed", type=int, default=42, help="simulation seed")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser(
        "convergence", help="estimator error vs simulation count (CSV)"
    )
    with_experiment(p)
    p.add_argument(
        "--counts",
        default="5000,50000,500000",
        help="comma-separated trace counts",
    )
    p.add_argument("--repeats", type=int, default=3, help="repeats per count")
    p.add_argument("--bins", type=int, default=1000, help="histogram bins")
    p.add_argument("--seed", type=int, default=0, help="study seed")
    p.set_defaults(func=_cmd_convergence)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        return args.func(args)
    except ParseError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (InfeasibleTargetError, QuadratureError, DegenerateModelError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except (ValidationError, DomainError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
