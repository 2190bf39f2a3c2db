"""Command-line surface: judge, calibrate, verify, eval, bon, synth.

Commands compose through files (JSONL datasets, a calibrator file, report
files) so intermediate artifacts stay inspectable and reusable. Every
command is a pure function of (config file, input files, seed): reruns
produce byte-identical outputs, and the effective configuration is echoed
into the output directory as the experiment record.

Exit codes: 0 success, 1 internal error, 2 input/IO error, 3 invalid data
for the requested operation.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import core
from .calibration import (
    CalibrationSample,
    DegenerateCalibrationError,
    fit,
    load_calibrator,
    save_calibrator,
)
from .core import JsonlError, ValidationError
from .evidence import AggregationSpec, accumulate, aggregate_matrix
from .judge import JudgeBackendConfig, JudgeError, judge_trajectory
from .metrics import (
    ScoredSample,
    auroc,
    best_of_n,
    brier,
    ece,
    linearity_diagnostic,
    risk_at,
)
from .pipeline import PipelineConfig, verify_batch
from .retrieval import (
    GuidelineStore,
    NoRelevantGuidelineError,
    UnretrievableAnswerError,
    retrieve,
)
from .synthetic import SyntheticSpec, generate, generate_active_scenario, save_dataset

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_INVALID = 3

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "pipeline": {
        "k": 3,
        "beta": 0.5,
        "alpha": 0.2,
        "epsilon_u": 0.5,
        "n_extra": 1,
        "n_comp": 2,
        "statistics": ["min", "avg"],
        "active_enabled": True,
        "expansion_enabled": True,
        "differential_enabled": True,
        "max_in_flight": 8,
    },
    "judge": {
        "kind": "mock",
        "endpoint": None,
        "model_name": None,
        "api_key": None,
        "top_logprobs": 10,
        "timeout_ms": 30000,
        "max_retries": 3,
        "mock_seed": 0,
    },
    "calibration": {
        "lambda": 1.0,
        "n_draws": 2000,
    },
    "synthetic": {
        "n_cases": 100,
        "candidates_per_case": 2,
        "steps_per_trajectory": [3, 8],
        "true_slope": 1.5,
        "true_intercept": -0.2,
        "rating_noise_sd": 0.5,
        "coverage_gap_rate": 0.0,
        "quality_sd": 1.0,
        "active_scenario": False,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_run_config(path: str | None, seed: int | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise JsonlError(f"{path}: invalid config JSON: {exc.msg}")
        if not isinstance(user, dict):
            raise JsonlError(f"{path}: config must be a JSON object")
        cfg = _deep_merge(cfg, user)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _judge_config(cfg: dict) -> JudgeBackendConfig:
    j = cfg["judge"]
    return JudgeBackendConfig(
        kind=j["kind"],
        endpoint=j.get("endpoint"),
        model_name=j.get("model_name"),
        api_key=j.get("api_key"),
        top_logprobs=j["top_logprobs"],
        timeout_ms=j["timeout_ms"],
        max_retries=j["max_retries"],
        mock_seed=j["mock_seed"],
    )


def _pipeline_config(cfg: dict) -> PipelineConfig:
    p = cfg["pipeline"]
    return PipelineConfig(
        k=p["k"],
        beta=p["beta"],
        alpha=p["alpha"],
        epsilon_u=p["epsilon_u"],
        n_extra=p["n_extra"],
        n_comp=p["n_comp"],
        aggregation=AggregationSpec(tuple(p["statistics"])),
        active_enabled=p["active_enabled"],
        expansion_enabled=p["expansion_enabled"],
        differential_enabled=p["differential_enabled"],
        seed=cfg["seed"],
        max_in_flight=p["max_in_flight"],
    )


def _synthetic_spec(cfg: dict) -> SyntheticSpec:
    s = cfg["synthetic"]
    p = cfg["pipeline"]
    return SyntheticSpec(
        n_cases=s["n_cases"],
        steps_per_trajectory=tuple(s["steps_per_trajectory"]),
        true_slope=s["true_slope"],
        true_intercept=s["true_intercept"],
        rating_noise_sd=s["rating_noise_sd"],
        coverage_gap_rate=s["coverage_gap_rate"],
        seed=cfg["seed"],
        candidates_per_case=s["candidates_per_case"],
        quality_sd=s["quality_sd"],
        k_guidelines=p["k"],
        n_extra=p["n_extra"],
        beta=p["beta"],
        statistics=tuple(p["statistics"]),
    )


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: dict, out: Path) -> None:
    with open(out / "effective_config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parallelism(args, cfg: dict) -> int:
    if args.parallel is not None:
        requested = args.parallel
    else:
        requested = os.cpu_count() or 1
    return max(1, min(requested, cfg["pipeline"]["max_in_flight"]))


def _labeled_scores(reports, trajectories) -> list[ScoredSample]:
    by_id = {t.id: t for t in trajectories}
    samples = []
    for r in reports:
        t = by_id.get(r.trajectory_id)
        if t is None or t.label is None:
            continue
        samples.append(
            ScoredSample(
                score=r.confidence, label=t.label, case_id=t.case_id, answer=t.answer
            )
        )
    return samples


# --- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args)
    spec = _synthetic_spec(cfg)
    if cfg["synthetic"]["active_scenario"]:
        dataset = generate_active_scenario(spec)
    else:
        dataset = generate(spec)
    save_dataset(dataset, out)
    _echo_config(cfg, out)
    print(
        f"synth: wrote {len(dataset.trajectories)} trajectories, "
        f"{len(dataset.store.guidelines)} guidelines to {out}"
    )
    return EXIT_OK


def cmd_judge(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args)
    trajectories = core.load_trajectories(args.trajectories)
    store = GuidelineStore.from_jsonl(args.guidelines)
    judge_cfg = _judge_config(cfg)
    k = cfg["pipeline"]["k"]
    max_in_flight = cfg["pipeline"]["max_in_flight"]

    def run(t):
        ranked = retrieve(store, t.answer, k)
        return judge_trajectory(
            t,
            [store.by_id[gid] for gid in ranked.ranked_ids],
            judge_cfg,
            max_in_flight=max_in_flight,
        )

    parallel = _parallelism(args, cfg)
    if parallel == 1 or len(trajectories) <= 1:
        matrices = [run(t) for t in trajectories]
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            matrices = list(pool.map(run, trajectories))
    core.save_ratings(out / "ratings.jsonl", matrices)
    _echo_config(cfg, out)
    print(f"judge: wrote {len(matrices)} rating matrices to {out / 'ratings.jsonl'}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args)
    trajectories = {t.id: t for t in core.load_trajectories(args.trajectories)}
    matrices = core.load_ratings(args.ratings)
    agg = AggregationSpec(tuple(cfg["pipeline"]["statistics"]))
    beta = cfg["pipeline"]["beta"]

    samples = []
    for m in matrices:
        t = trajectories.get(m.trajectory_id)
        if t is None or t.label is None:
            continue
        feats = aggregate_matrix(m, agg)
        final = accumulate(list(feats), beta)[-1]
        samples.append(CalibrationSample(evidence=final, label=t.label))
    if not samples:
        raise DegenerateCalibrationError("no labeled trajectories with ratings")
    if len(samples) < 50:
        print(
            f"warning: only {len(samples)} labeled samples; calibration may be "
            f"unstable below 50",
            file=sys.stderr,
        )
    post = fit(
        samples,
        lam=cfg["calibration"]["lambda"],
        n_draws=cfg["calibration"]["n_draws"],
        seed=cfg["seed"],
    )
    save_calibrator(
        out / "calibrator.jsonl", post, statistics=agg.statistics, beta=beta
    )
    _echo_config(cfg, out)
    print(
        f"calibrate: fit on {len(samples)} samples, kept {post.n_draws} draws "
        f"(acceptance {post.acceptance_rate:.3f}) -> {out / 'calibrator.jsonl'}"
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    post, header = load_calibrator(args.calibrator)
    # Evidence construction must match the calibrator: adopt its recorded
    # aggregation statistics and discount factor.
    cfg["pipeline"]["statistics"] = list(header.get(
        "statistics", cfg["pipeline"]["statistics"]
    ))
    cfg["pipeline"]["beta"] = header.get("beta", cfg["pipeline"]["beta"])
    out = _out_dir(args)
    trajectories = core.load_trajectories(args.trajectories)
    store = GuidelineStore.from_jsonl(args.guidelines)
    judge_cfg = _judge_config(cfg)
    pipe_cfg = _pipeline_config(cfg)

    extra_answers = []
    if args.answer_pool:
        with open(args.answer_pool, encoding="utf-8") as fh:
            extra_answers = [line.strip() for line in fh if line.strip()]

    outcomes = verify_batch(
        trajectories,
        store,
        judge_cfg,
        post,
        pipe_cfg,
        parallelism=_parallelism(args, cfg),
        extra_answers=extra_answers,
    )
    reports = [o.report for o in outcomes if o.ok]
    errors = [o for o in outcomes if not o.ok]
    core.save_reports(out / "reports.jsonl", reports)
    if errors:
        core._write_jsonl(
            out / "verify_errors.jsonl",
            ({"trajectory_id": o.trajectory_id, "error": o.error} for o in errors),
        )
    _echo_config(cfg, out)
    print(
        f"verify: {len(reports)} reports, {len(errors)} errors -> "
        f"{out / 'reports.jsonl'}"
    )
    return EXIT_OK


def _metric_rows(reports, trajectories) -> list[dict]:
    samples = _labeled_scores(reports, trajectories)
    if not samples:
        raise ValidationError("no labeled trajectories matching the reports")
    n = len(samples)
    rows = [
        {"name": "auroc", "value": auroc(samples), "n": n, "config": {}},
        {
            "name": "risk_at_half",
            "value": risk_at(samples, 0.5),
            "n": n,
            "config": {"fraction": 0.5},
        },
        {
            "name": "ece",
            "value": ece(samples, 10),
            "n": n,
            "config": {"n_bins": 10},
        },
        {"name": "brier", "value": brier(samples), "n": n, "config": {}},
    ]
    by_id = {t.id: t for t in trajectories}
    evidence = []
    for r in reports:
        t = by_id.get(r.trajectory_id)
        if t is None or t.label is None or not r.per_step_evidence:
            continue
        evidence.append((float(r.per_step_evidence[-1].values.mean()), t.label))
    if evidence:
        try:
            diag = linearity_diagnostic(evidence, n_bins=10)
        except ValidationError:
            diag = None
        if diag is not None:
            for name, value in (
                ("linearity_slope", diag.slope),
                ("linearity_intercept", diag.intercept),
                ("linearity_r_squared", diag.r_squared),
                ("welch_t", diag.welch_t),
                ("welch_p", diag.welch_p),
            ):
                rows.append(
                    {
                        "name": name,
                        "value": value,
                        "n": len(evidence),
                        "config": {"n_bins": 10},
                    }
                )
    return rows


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args)
    reports = core.load_reports(args.reports)
    trajectories = core.load_trajectories(args.trajectories)
    rows = _metric_rows(reports, trajectories)
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    lines = ["metric                      value        n"]
    for row in rows:
        lines.append(f"{row['name']:<26} {row['value']:>10.6f} {row['n']:>8d}")
    text = "\n".join(lines) + "\n"
    with open(out / "metrics.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    _echo_config(cfg, out)
    print(text, end="")
    return EXIT_OK


def cmd_bon(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args)
    reports = core.load_reports(args.reports)
    trajectories = core.load_trajectories(args.trajectories)
    samples = _labeled_scores(reports, trajectories)
    if not samples:
        raise ValidationError("no labeled trajectories matching the reports")
    n_list = [int(x) for x in args.n.split(",")] if args.n else [4, 8, 16]
    rows = []
    for n in n_list:
        rows.append(
            {
                "name": f"best_of_{n}",
                "value": best_of_n(samples, n),
                "n": len(samples),
                "config": {"n": n},
            }
        )
    with open(out / "bon.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    lines = ["selection        accuracy"]
    for row in rows:
        lines.append(f"{row['name']:<16} {row['value']:>8.4f}")
    text = "\n".join(lines) + "\n"
    with open(out / "bon.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    _echo_config(cfg, out)
    print(text, end="")
    return EXIT_OK


# --- argument parsing --------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glean",
        description="Verify agent trajectories against domain guidelines "
        "with calibrated confidence.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument(
        "--parallel", type=int, default=None, help="batch parallelism"
    )
    common.add_argument("--out-dir", required=True, help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "judge", parents=[common], help="score trajectories against guidelines"
    )
    p.add_argument("--trajectories", required=True)
    p.add_argument("--guidelines", required=True)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser(
        "calibrate", parents=[common], help="fit the calibrator on labeled ratings"
    )
    p.add_argument("--ratings", required=True)
    p.add_argument("--trajectories", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser(
        "verify", parents=[common], help="produce verification reports"
    )
    p.add_argument("--trajectories", required=True)
    p.add_argument("--guidelines", required=True)
    p.add_argument("--calibrator", required=True)
    p.add_argument(
        "--answer-pool",
        default=None,
        help="text file of extra candidate answers for differential checks",
    )
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", parents=[common], help="evaluate reports with labels")
    p.add_argument("--reports", required=True)
    p.add_argument("--trajectories", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "bon", parents=[common], help="Best-of-N selection accuracy per case"
    )
    p.add_argument("--reports", required=True)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--n", default="4,8,16", help="comma-separated N values")
    p.set_defaults(func=cmd_bon)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_INPUT
    except JsonlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (
        DegenerateCalibrationError,
        NoRelevantGuidelineError,
        UnretrievableAnswerError,
        ValidationError,
        JudgeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
