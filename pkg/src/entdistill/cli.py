"""Command-line harness: exact runs, shot-mode estimates, reference-table reproduction, oracle sweeps."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from entdistill import detection, optics, shots
from entdistill.errors import (
    EntDistillError,
    NoConvergenceError,
    NonPhysicalStateError,
    NotDistillableError,
)
from entdistill.qstate import (
    FIXTURE_NAMES,
    fixture,
    load_state,
    marginal,
    random_product_state,
    random_state,
    wootters_concurrence,
)

log = logging.getLogger("entdistill")

EXIT_OK = 0
EXIT_INVALID_INPUT = 2
EXIT_NOT_DISTILLABLE = 3
EXIT_NO_CONVERGENCE = 4
EXIT_BUDGET_CAP = 5

EXACT_THRESHOLD = optics.DEFAULT_THRESHOLD
SHOT_THRESHOLD = 0.1
SWEEP_MAX_ITERS = 5000


def reference_values() -> dict:
    text = resources.files("entdistill").joinpath("data/reference_values.json").read_text()
    return json.loads(text)


@dataclass
class RunConfig:
    mode: str
    fixture: str | None = None
    params: list[float] = field(default_factory=list)
    state_file: str | None = None
    seed: int = 0
    plan: shots.ShotPlan | None = None
    threshold: float | None = None
    max_iters: int | None = None

    def __post_init__(self):
        if self.fixture is not None and self.state_file is not None:
            raise ValueError("give either a fixture or a state file, not both")
        if self.mode == "shots" and self.plan is None:
            raise ValueError("shots mode requires a shot plan")

    def load(self) -> np.ndarray:
        if self.fixture is None and self.state_file is None:
            raise ValueError("a --fixture or --state source is required")
        if self.fixture is not None:
            return fixture(self.fixture, *self.params).state
        return load_state(self.state_file)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "fixture": self.fixture,
            "params": list(self.params),
            "state_file": self.state_file,
            "seed": self.seed,
            "plan": None if self.plan is None else self.plan.to_dict(),
            "threshold": self.threshold,
            "max_iters": self.max_iters,
        }


# --- reports ---------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in _jsonable(row).items()})
    return buf.getvalue()


def _parse_cell(text: str):
    if text == "":
        return None
    if text in ("True", "False"):
        return text == "True"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def csv_to_rows(text: str) -> list[dict]:
    return [
        {k: _parse_cell(v) for k, v in row.items()}
        for row in csv.DictReader(io.StringIO(text))
    ]


def write_report(report: dict, out: str | None, fmt: str) -> str:
    text = rows_to_csv(report["rows"]) if fmt == "csv" else dumps_report(report)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    return text


def read_report(path, fmt: str):
    text = Path(path).read_text()
    return csv_to_rows(text) if fmt == "csv" else json.loads(text)


# --- commands --------------------------------------------------------------


def _state_label(config: RunConfig) -> str:
    if config.fixture:
        return config.fixture + "".join(f"_{p:g}" for p in config.params)
    return Path(config.state_file).stem


def cmd_exact(config: RunConfig) -> tuple[dict, int]:
    rho = config.load()
    threshold = config.threshold or EXACT_THRESHOLD
    max_iters = config.max_iters or optics.DEFAULT_MAX_ITERS
    report = {
        "command": "exact",
        "config": config.to_dict(),
        "state": _state_label(config),
        "oracle_concurrence": wootters_concurrence(rho),
    }
    try:
        record, distilled = optics.distill(rho, threshold, max_iters)
    except NotDistillableError as exc:
        report.update(status="not_distillable", reason=str(exc), rows=[])
        return report, EXIT_NOT_DISTILLABLE
    except NoConvergenceError as exc:
        report.update(
            status="asymptotic",
            asymptotic=True,
            reason=str(exc),
            distillation=exc.record.to_dict(),
            rows=exc.record.rows(),
        )
        return report, EXIT_NO_CONVERGENCE

    dec = detection.decompose_q(detection.q_matrix(distilled))
    svals = detection.lorentz_singular_values(
        distilled, record.op_a.f, record.op_b.f, tol=max(10 * threshold, detection.NORMAL_FORM_TOL)
    )
    c_dis, c_init = detection.concurrence_from_visibilities(svals)
    report.update(
        status="ok",
        asymptotic=False,
        distillation=record.to_dict(),
        decomposition=dec.to_dict(),
        lorentz=svals.to_dict(),
        concurrence_distilled=c_dis,
        concurrence_initial=c_init,
        rows=record.rows(),
    )
    return report, EXIT_OK


def cmd_estimate(config: RunConfig) -> tuple[dict, int]:
    rho = config.load()
    plan = config.plan
    est = shots.estimate_concurrence(rho, plan, shots.make_rng(config.seed))
    summary = {
        "state": _state_label(config),
        "k_dis": est.record.iterations,
        "copies_distill": est.copies_distill,
        "copies_quant": est.copies_quant,
        "total": est.copies,
        "C_estimate": est.concurrence,
        "stderr": est.stderr,
    }
    report = {
        "command": "estimate",
        "config": config.to_dict(),
        "seed": config.seed,
        "oracle_concurrence": wootters_concurrence(rho),
        "estimate": est.to_dict(),
        "rows": [summary],
    }
    return report, EXIT_OK


def table1_rows(only: str | None = None) -> list[tuple[int, dict]]:
    """Reference rows with their table index (the index fixes each row's seed)."""
    rows = list(enumerate(reference_values()["table1"]))
    if only is not None:
        rows = [(i, r) for i, r in rows if r["label"] == only]
        if not rows:
            labels = ", ".join(r["label"] for r in reference_values()["table1"])
            raise ValueError(f"unknown reference row {only!r}; choose from {labels}")
    return rows


def cmd_table1(
    config: RunConfig, replications: int = 30, only: str | None = None
) -> tuple[dict, int]:
    out_rows = []
    details = []
    exit_code = EXIT_OK
    for i, ref_row in table1_rows(only):
        rho = fixture(ref_row["fixture"], *ref_row["params"]).state
        log.info("table1: %s", ref_row["label"])
        res = shots.min_copies_search(
            rho,
            target_halfwidth=config.plan.target_halfwidth,
            seed=config.seed + 1000 * i,
            replications=replications,
            base_plan=config.plan,
        )
        if res.budget_exceeded:
            log.warning("budget cap reached for %s", ref_row["label"])
            exit_code = EXIT_BUDGET_CAP
        out_rows.append(
            {
                "state": ref_row["label"],
                "k_dis": res.k_dis,
                "copies_distill": res.copies_distill,
                "copies_quant": res.copies_quant,
                "total": res.total,
                "C_estimate": res.c_mean,
                "stderr": res.c_std,
                "shots_q": res.plan.shots_per_q_setting,
                "shots_lambda": res.plan.shots_per_lambda_setting,
                "survival": res.survival,
                "budget_exceeded": res.budget_exceeded,
                "ref_k_dis": ref_row["k_dis"],
                "ref_total": ref_row["total"],
                "ref_tomography": ref_row["tomography"],
            }
        )
        details.append(res.to_dict())
    report = {
        "command": "table1",
        "config": config.to_dict(),
        "replications": replications,
        "ref_columns": "ref_* columns are published reference values, not computed",
        "searches": details,
        "rows": out_rows,
    }
    return report, exit_code


def sweep_states(n_states: int, rank: str, seed: int):
    for i in range(n_states):
        s = seed + i
        if rank == "product":
            yield s, random_product_state(s)
        else:
            yield s, random_state(s, int(rank))


def cmd_sweep(config: RunConfig, n_states: int, rank: str) -> tuple[dict, int]:
    threshold = config.threshold or EXACT_THRESHOLD
    max_iters = config.max_iters or SWEEP_MAX_ITERS
    rows = []
    for s, rho in sweep_states(n_states, rank, config.seed):
        oracle = wootters_concurrence(rho)
        v0 = float(np.linalg.norm(marginal(rho, "A")))
        row = {
            "seed": s,
            "status": "ok",
            "iterations": None,
            "C_pipeline": None,
            "C_oracle": oracle,
            "deviation": None,
            "V_A0": v0,
            "complementarity": v0**2 + oracle**2 - 1,
            "lambda_max": None,
        }
        try:
            record, distilled = optics.distill(rho, threshold, max_iters)
        except NotDistillableError:
            row["status"] = "not_distillable"
        except NoConvergenceError as exc:
            row["status"] = "asymptotic"
            row["iterations"] = exc.record.iterations
        else:
            svals = detection.lorentz_singular_values(
                distilled, record.op_a.f, record.op_b.f
            )
            c = detection.concurrence_from_visibilities(svals)[1]
            lam = detection.visibilities(distilled)[2]
            row.update(
                iterations=record.iterations,
                C_pipeline=c,
                deviation=abs(c - oracle),
                lambda_max=lam[0],
            )
        rows.append(row)
    ok = [r for r in rows if r["status"] == "ok"]
    summary = {
        "n_states": n_states,
        "rank": rank,
        "max_deviation": max((r["deviation"] for r in ok), default=None),
        "not_distillable": sum(r["status"] == "not_distillable" for r in rows),
        "asymptotic": sum(r["status"] == "asymptotic" for r in rows),
        "max_iterations": max((r["iterations"] for r in ok), default=None),
        "max_lambda": max((r["lambda_max"] for r in ok), default=None),
    }
    if rank == "1":
        summary["max_complementarity_residual"] = max(abs(r["complementarity"]) for r in rows)
    report = {"command": "sweep", "config": config.to_dict(), "summary": summary, "rows": rows}
    return report, EXIT_OK


def cmd_oracle(config: RunConfig) -> tuple[dict, int]:
    c = wootters_concurrence(config.load())
    row = {"state": _state_label(config), "concurrence": c}
    return {"command": "oracle", "config": config.to_dict(), "rows": [row], **row}, EXIT_OK


# --- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--fixture", choices=FIXTURE_NAMES)
    src.add_argument("--state", metavar="FILE", help="JSON state file (matrix_re, matrix_im)")
    common.add_argument("--params", type=float, nargs="*", default=[])
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--shots-gamma", type=int, default=400)
    common.add_argument("--shots-q", type=int, default=100)
    common.add_argument("--shots-lambda", type=int, default=200)
    common.add_argument("--threshold", type=float)
    common.add_argument("--max-iters", type=int)
    common.add_argument("--out", metavar="PATH")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="entdistill",
        description="Distill two-qubit states and read concurrence off interference visibilities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("exact", parents=[common], help="exact-expectation pipeline")
    sub.add_parser("estimate", parents=[common], help="finite-shot estimate")
    t1 = sub.add_parser("table1", parents=[common], help="minimum-copy search for the six test states")
    t1.add_argument("--replications", type=int, default=30)
    t1.add_argument("--only", metavar="LABEL", help="run a single row")
    sw = sub.add_parser("sweep", parents=[common], help="random states vs. the Wootters oracle")
    sw.add_argument("--n-states", type=int, default=200)
    sw.add_argument("--rank", choices=("1", "2", "3", "4", "product"), default="4")
    sub.add_parser("oracle", parents=[common], help="Wootters concurrence only")
    return parser


def _config(args) -> RunConfig:
    shot_mode = args.command in ("estimate", "table1")
    fixture_name, state_file = args.fixture, args.state
    if args.command in ("table1", "sweep"):
        fixture_name, state_file = None, None  # states come from the command
    plan = None
    if shot_mode:
        plan = shots.ShotPlan(
            shots_per_gamma_setting=args.shots_gamma,
            shots_per_q_setting=args.shots_q,
            shots_per_lambda_setting=args.shots_lambda,
            distill_threshold=args.threshold or SHOT_THRESHOLD,
            max_iters=args.max_iters or shots.ShotPlan.max_iters,
        )
    return RunConfig(
        mode="shots" if shot_mode else "exact",
        fixture=fixture_name,
        params=list(args.params),
        state_file=state_file,
        seed=args.seed,
        plan=plan,
        threshold=args.threshold,
        max_iters=args.max_iters,
    )


def run(argv=None) -> tuple[dict | None, int]:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _config(args)
        if args.command == "exact":
            report, code = cmd_exact(config)
        elif args.command == "estimate":
            report, code = cmd_estimate(config)
        elif args.command == "table1":
            report, code = cmd_table1(config, args.replications, args.only)
        elif args.command == "sweep":
            report, code = cmd_sweep(config, args.n_states, args.rank)
        else:
            report, code = cmd_oracle(config)
    except (NonPhysicalStateError, ValueError, FileNotFoundError) as exc:
        print(f"entdistill: invalid input: {exc}", file=sys.stderr)
        return None, EXIT_INVALID_INPUT
    except NotDistillableError as exc:
        print(f"entdistill: not distillable: {exc}", file=sys.stderr)
        return None, EXIT_NOT_DISTILLABLE
    except NoConvergenceError as exc:
        print(f"entdistill: no convergence: {exc}", file=sys.stderr)
        return None, EXIT_NO_CONVERGENCE
    except EntDistillError as exc:
        print(f"entdistill: {exc}", file=sys.stderr)
        return None, 1
    write_report(report, args.out, args.format)
    return report, code


def main(argv=None) -> int:
    return run(argv)[1]


if __name__ == "__main__":
    sys.exit(main())
