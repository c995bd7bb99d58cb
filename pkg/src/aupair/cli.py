"""Command-line orchestration of the pipeline phases.

Each subcommand consumes the artifacts of its upstream phase from the
configured workdir and writes its own atomically, embedding the config
digest and the digests of its inputs.  With the scripted or replay backend
and fixed seeds every command is idempotent: rerunning it reproduces its
artifacts byte for byte.

Exit codes: 0 success, 1 validation problem (config, missing upstream
artifact), 2 runtime failure (budget, transport, runner environment).
"""

from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

import click

from . import analysis as analysis_mod
from .config import ConfigError, RunConfig, load_config, resolve_in_config_dir
from .evaluator import Evaluator, RunLimits, RunnerMissingError
from .extraction import (
    AuPairList,
    FixQualityMatrix,
    compute_fix_quality_matrix,
    extract_aupairs,
    random_pair_baseline,
)
from .gateway import (
    Budget,
    BudgetExhaustedError,
    Gateway,
    HttpBackend,
    HttpEndpointConfig,
    ReplayBackend,
    ReplayMissError,
    ReplayStore,
    ScriptedBackend,
    ScriptedOracle,
    TransportError,
    build_replay_store,
)
from .inference import (
    StrategyResult,
    compute_metrics,
    metrics_sweep,
    run_aupair_inference,
    run_best_of_n,
    run_self_repair,
)
from .model import (
    DatasetError,
    load_dataset,
    split_from_manifest,
    split_to_manifest,
    stratified_split,
)
from .pairgen import BudgetTooSmallError, CuratedDataset, PairStore, curate_guesses, generate_pairs
from .storage import dump_json, load_json, sha256_file

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class MissingArtifactError(ValueError):
    """An upstream artifact is absent; the message names the producing command."""


def _require(path: Path, artifact: str, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing {artifact} ({path}); run `aupair {producer}` first")
    return path


def _provenance(config: RunConfig, inputs: dict[str, Path] | None = None) -> dict:
    out: dict = {"config_digest": config.digest}
    if inputs:
        out["inputs"] = {name: sha256_file(p) for name, p in sorted(inputs.items())}
    return out


def _evaluator(config: RunConfig) -> Evaluator:
    return Evaluator(
        limits=RunLimits(wall_timeout=config.wall_timeout, max_output_bytes=config.max_output_bytes),
        runner_cmd=config.runner_cmd,
        numeric_tolerance=config.numeric_tolerance,
    )


def _backend(config: RunConfig, known_problem_ids=None):
    gw = config.gateway
    if gw.backend == "scripted":
        ruleset_path = resolve_in_config_dir(config, gw.scripted_ruleset)
        oracle = ScriptedOracle.from_json_file(ruleset_path, known_problem_ids=known_problem_ids)
        return ScriptedBackend(oracle)
    if gw.backend == "replay":
        store = ReplayStore(config.workdir / gw.replay_store)
        if len(store) == 0 and config.run_log_path().exists():
            # resuming from a prior run: seed the store from its log
            store = build_replay_store(config.run_log_path(), config.workdir / gw.replay_store)
        fallback = None
        if not gw.replay_strict and gw.http.get("url"):
            fallback = HttpBackend(_http_config(gw.http))
        return ReplayBackend(store, strict=gw.replay_strict, fallback=fallback)
    return HttpBackend(_http_config(gw.http))


def _http_config(section: dict) -> HttpEndpointConfig:
    return HttpEndpointConfig(
        url=section["url"],
        prompt_path=section.get("prompt_path", "prompt"),
        completion_path=section.get("completion_path", "completion"),
        token_env=section.get("token_env"),
        temperature_path=section.get("temperature_path", "temperature"),
        max_tokens_path=section.get("max_tokens_path", "max_tokens"),
        stop_path=section.get("stop_path"),
        request_template=section.get("request_template", {}),
        timeout_s=float(section.get("timeout_s", 60.0)),
        retries=int(section.get("retries", 3)),
    )


def _gateway(config: RunConfig, limit: int, known_problem_ids=None) -> Gateway:
    log_path = config.run_log_path()
    start_index = 0
    if log_path.exists():
        with open(log_path, "r", encoding="utf-8") as fh:
            start_index = sum(1 for line in fh if line.strip())
    return Gateway(
        _backend(config, known_problem_ids),
        Budget(limit=limit),
        run_log_path=log_path,
        start_index=start_index,
    )


def _load_curated(config: RunConfig) -> CuratedDataset:
    return CuratedDataset.load(_require(config.curated_path(), "curated dataset", "curate"))


def _load_split_subsets(config: RunConfig, curated: CuratedDataset):
    manifest = load_json(_require(config.split_path(), "split manifest", "split"))
    split = split_from_manifest(manifest, curated.problems)
    return (
        curated.subset(split.train),
        curated.subset(split.val),
        curated.subset(split.test),
    )


@click.group()
@click.option(
    "--config",
    "-c",
    "config_path",
    required=True,
    type=click.Path(),
    help="Path to the run's TOML config.",
)
@click.pass_context
def cli(ctx, config_path):
    """Golden-pair pipeline: curate, split, pairgen, extract, eval, analyze."""
    ctx.obj = config_path


def _config(ctx) -> RunConfig:
    return load_config(ctx.obj)


@cli.command()
@click.pass_context
def curate(ctx):
    """Generate and score an initial guess per problem; drop solved problems."""
    config = _config(ctx)
    problems = load_dataset(config.dataset_path, difficulty_vocab=config.difficulty_vocab)
    with _gateway(config, config.budget_curation, [p.id for p in problems]) as gateway:
        dataset, report = curate_guesses(
            problems,
            gateway,
            _evaluator(config),
            temperature=config.temperature,
            max_tokens=config.max_tokens,
        )
    dataset.save(config.curated_path(), provenance=_provenance(config, {"dataset": config.dataset_path}))
    dump_json(config.curation_report_path(), {**report.to_record(), "provenance": _provenance(config)})
    click.echo(
        f"curated {report.retained} problems "
        f"({report.solved_and_dropped} solved and dropped, "
        f"{report.generation_failures} generation failures, "
        f"mean initial score {report.mean_initial_score:.3f})"
    )


@cli.command()
@click.pass_context
def split(ctx):
    """Stratified train/val/test split of the curated problems."""
    config = _config(ctx)
    curated_path = _require(config.curated_path(), "curated dataset", "curate")
    dataset = CuratedDataset.load(curated_path)
    result = stratified_split(dataset.problems, config.split_ratios, config.split_seed)
    manifest = split_to_manifest(result, config.split_ratios, config.split_seed)
    manifest["provenance"] = _provenance(config, {"curated": curated_path})
    dump_json(config.split_path(), manifest)
    click.echo(f"split sizes: train={len(result.train)} val={len(result.val)} test={len(result.test)}")


@cli.command()
@click.pass_context
def pairgen(ctx):
    """Phase 1: sample repairs over the training set, keep improving pairs."""
    config = _config(ctx)
    curated = _load_curated(config)
    train, _, _ = _load_split_subsets(config, curated)
    with _gateway(config, config.budget_phase1, [p.id for p in curated.problems]) as gateway:
        store = generate_pairs(
            train,
            gateway,
            _evaluator(config),
            n_calls=config.budget_phase1,
            k=config.pairgen_k,
            seed=config.pairgen_seed,
            temperature=config.temperature,
            max_tokens=config.max_tokens,
            prompt_style=config.prompt_style,
        )
    store.save(
        config.pairs_path(),
        provenance=_provenance(
            config, {"curated": config.curated_path(), "split": config.split_path()}
        ),
    )
    click.echo(f"collected {len(store)} candidate pairs from {gateway.budget.used} calls")


@cli.command()
@click.pass_context
def extract(ctx):
    """Phase 2: fix-quality matrix plus greedy selection of the golden pairs."""
    config = _config(ctx)
    curated = _load_curated(config)
    _, val, _ = _load_split_subsets(config, curated)
    pairs_path = _require(config.pairs_path(), "candidate pairs", "pairgen")
    store = PairStore.load(pairs_path)
    provenance = _provenance(
        config,
        {"curated": config.curated_path(), "split": config.split_path(), "pairs": pairs_path},
    )
    n_cells = len(store) * len(val.problems)
    with _gateway(config, max(n_cells, 1), [p.id for p in curated.problems]) as gateway:
        matrix = compute_fix_quality_matrix(
            store,
            val,
            gateway,
            _evaluator(config),
            source_problems=curated.problems_by_id(),
            temperature=config.temperature,
            max_tokens=config.max_tokens,
            prompt_style=config.prompt_style,
            max_workers=config.gateway.parallelism,
            provenance=provenance,
        )
    matrix.save(config.matrix_path())
    selection = extract_aupairs(matrix, tolerance=config.tolerance)
    selection.save(config.aupairs_path(), provenance=provenance)
    click.echo(
        f"matrix {matrix.shape[0]}x{matrix.shape[1]} computed; "
        f"selected {len(selection)} golden pairs (tolerance {config.tolerance})"
    )


def _run_strategy(
    config: RunConfig, strategy: str, n: int
) -> tuple[StrategyResult, CuratedDataset, dict[str, Path]]:
    curated = _load_curated(config)
    _, _, test = _load_split_subsets(config, curated)
    evaluator = _evaluator(config)
    known_ids = [p.id for p in curated.problems]
    inputs: dict[str, Path] = {"curated": config.curated_path(), "split": config.split_path()}

    if strategy in ("aupair", "random_pairs"):
        pairs_path = _require(config.pairs_path(), "candidate pairs", "pairgen")
        inputs["pairs"] = pairs_path
        store = PairStore.load(pairs_path)
        if strategy == "aupair":
            aupairs_path = _require(config.aupairs_path(), "golden pair list", "extract")
            inputs["aupairs"] = aupairs_path
            ranked = AuPairList.load(aupairs_path).resolve(store)
        else:
            ranked = random_pair_baseline(store, n=n, seed=config.random_baseline_seed)
        with _gateway(config, max(n, 1) * max(len(test.problems), 1), known_ids) as gateway:
            result = run_aupair_inference(
                test,
                ranked,
                n,
                gateway,
                evaluator,
                source_problems=curated.problems_by_id(),
                temperature=config.temperature,
                max_tokens=config.max_tokens,
                prompt_style=config.prompt_style,
                strategy_label=strategy,
            )
    elif strategy == "best_of_n":
        with _gateway(config, max(n, 1) * max(len(test.problems), 1), known_ids) as gateway:
            result = run_best_of_n(
                test,
                n,
                gateway,
                evaluator,
                temperature=config.temperature,
                max_tokens=config.max_tokens,
                prompt_style=config.prompt_style,
            )
    elif strategy == "self_repair":
        with _gateway(config, max(n, 1) * max(len(test.problems), 1), known_ids) as gateway:
            result = run_self_repair(
                test,
                n,
                gateway,
                evaluator,
                f=config.self_repair_feedback,
                r=config.self_repair_repairs,
                temperature=config.temperature,
                max_tokens=config.max_tokens,
                prompt_style=config.prompt_style,
            )
    else:
        raise ConfigError(f"unknown strategy {strategy!r}")
    return result, test, inputs


def _rewrite_scaling_csv(config: RunConfig) -> None:
    """Regenerate the scaling CSV from every metrics JSON present (idempotent)."""
    metrics_dir = config.workdir / "metrics"
    rows = []
    for path in sorted(metrics_dir.glob("*_n*.json")):
        data = load_json(path)
        rows.append(
            {
                "strategy": data["strategy"],
                "n": data["n"],
                "test_pass_rate": data["test_pass_rate"],
                "strict_accuracy": data["strict_accuracy"],
                "n_problems": data["n_problems"],
            }
        )
    rows.sort(key=lambda r: (r["strategy"], r["n"]))
    buffer = io.StringIO()
    writer = csv.DictWriter(
        buffer, fieldnames=["strategy", "n", "test_pass_rate", "strict_accuracy", "n_problems"]
    )
    writer.writeheader()
    writer.writerows(rows)
    from .storage import atomic_write_text

    atomic_write_text(config.scaling_csv_path(), buffer.getvalue())


@cli.command("eval")
@click.option("--strategy", required=True, type=click.Choice(["aupair", "best_of_n", "self_repair", "random_pairs"]))
@click.option("--n", "n", required=True, type=int, help="Per-problem call budget N.")
@click.option("--sweep", is_flag=True, help="Also write metrics rows for every budget 1..N.")
@click.pass_context
def eval_cmd(ctx, strategy, n, sweep):
    """Run one inference strategy on the test split and report both metrics."""
    config = _config(ctx)
    result, test, inputs = _run_strategy(config, strategy, n)
    provenance = _provenance(config, inputs)
    result.save(config.result_path(strategy, n), provenance=provenance)

    report = compute_metrics(result, test)
    record = {"strategy": strategy, "n": n, **report.to_record(), "provenance": provenance}
    dump_json(config.metrics_path(strategy, n), record)
    if sweep:
        for budget, sweep_report in metrics_sweep(result, test, range(1, n + 1)):
            sweep_record = {"strategy": strategy, "n": budget, **sweep_report.to_record(), "provenance": provenance}
            dump_json(config.metrics_path(strategy, budget), sweep_record)
    _rewrite_scaling_csv(config)
    click.echo(
        f"{strategy} at N={n}: test_pass_rate={report.test_pass_rate:.4f} "
        f"strict_accuracy={report.strict_accuracy:.4f} over {report.n_problems} problems"
    )


@cli.command()
@click.option(
    "--which",
    required=True,
    type=click.Choice(["diversity", "lineage", "difficulty", "category"]),
)
@click.option("--strategy", default="aupair", show_default=True)
@click.option("--n", "n", type=int, default=None, help="Budget of the eval run to analyze.")
@click.pass_context
def analyze(ctx, which, strategy, n):
    """Post-hoc reports over persisted results and pair stores."""
    config = _config(ctx)
    config.reports_dir().mkdir(parents=True, exist_ok=True)

    if which == "lineage":
        pairs_path = _require(config.pairs_path(), "candidate pairs", "pairgen")
        histogram = analysis_mod.lineage_histogram(PairStore.load(pairs_path))
        out = config.reports_dir() / "lineage.json"
        dump_json(out, {"histogram": {str(k): v for k, v in histogram.items()}, "provenance": _provenance(config, {"pairs": pairs_path})})
        click.echo(f"lineage depths: {histogram or '{}'} -> {out}")
        return

    if n is None:
        raise ConfigError("--n is required for diversity and breakdown reports")
    result_path = _require(
        config.result_path(strategy, n), f"{strategy} results at N={n}", f"eval --strategy {strategy} --n {n}"
    )
    result = StrategyResult.load(result_path)
    curated = _load_curated(config)
    _, _, test = _load_split_subsets(config, curated)

    if which == "diversity":
        report = analysis_mod.diversity_score(result, test, n=n)
        out = config.reports_dir() / f"diversity_{strategy}_n{n}.json"
        dump_json(out, {**report.to_record(), "provenance": _provenance(config, {"result": result_path})})
        click.echo(f"diversity delta={report.delta:.4f} (s_max={report.s_max}) -> {out}")
        return

    axis = which
    rows = analysis_mod.breakdown(result, test, axis=axis)
    out_json = config.reports_dir() / f"breakdown_{axis}_{strategy}_n{n}.json"
    dump_json(out_json, {"rows": rows, "provenance": _provenance(config, {"result": result_path})})
    out_csv = config.reports_dir() / f"breakdown_{axis}_{strategy}_n{n}.csv"
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(rows[0].keys()) if rows else ["bucket"])
    writer.writeheader()
    writer.writerows(rows)
    from .storage import atomic_write_text

    atomic_write_text(out_csv, buffer.getvalue())
    click.echo(f"{axis} breakdown over {len(rows)} buckets -> {out_json}")


@cli.command("dry-run")
@click.pass_context
def dry_run(ctx):
    """Print the planned LLM call count per phase without consuming budget."""
    config = _config(ctx)
    problems = load_dataset(config.dataset_path, difficulty_vocab=config.difficulty_vocab)
    click.echo(f"curate: {len(problems)} calls (one per problem)")
    click.echo(f"pairgen: up to {config.budget_phase1} calls")
    if config.pairs_path().exists() and config.split_path().exists() and config.curated_path().exists():
        store = PairStore.load(config.pairs_path())
        curated = CuratedDataset.load(config.curated_path())
        _, val, test = _load_split_subsets(config, curated)
        click.echo(f"extract: {len(store)} pairs x {len(val.problems)} val problems = {len(store) * len(val.problems)} calls")
        per_strategy = config.budget_inference * len(test.problems)
        click.echo(
            f"eval: N={config.budget_inference} x {len(test.problems)} test problems = {per_strategy} calls per strategy"
        )
    else:
        click.echo("extract: |pairs| x |val| calls (run pairgen and split to see exact numbers)")
        click.echo(f"eval: N={config.budget_inference} x |test| calls per strategy")
    click.echo("analyze: 0 calls")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return EXIT_RUNTIME
    except click.exceptions.ClickException as exc:
        exc.show()
        return EXIT_VALIDATION
    except (ConfigError, DatasetError, MissingArtifactError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_VALIDATION
    except (
        BudgetExhaustedError,
        BudgetTooSmallError,
        TransportError,
        ReplayMissError,
        RunnerMissingError,
    ) as exc:
        click.echo(f"runtime error: {exc}", err=True)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
