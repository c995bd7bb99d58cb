"""Run configuration: one TOML file, validated as a whole, digested for provenance."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .prompts import DEFAULT_STYLE, STYLES
from .storage import canonical_json, sha256_text

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Aggregated configuration problems; the message lists every one."""


@dataclass(frozen=True)
class GatewayConfig:
    backend: str = "scripted"
    parallelism: int = 1
    scripted_ruleset: str | None = None
    replay_store: str = "replay"
    replay_strict: bool = True
    http: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunConfig:
    dataset_path: Path
    workdir: Path
    config_dir: Path
    digest: str
    difficulty_vocab: tuple[str, ...] | None = None
    split_ratios: tuple[float, float, float] = (0.375, 0.125, 0.5)
    split_seed: int = 0
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    budget_curation: int = 10_000
    budget_phase1: int = 10_000
    budget_inference: int = 32
    temperature: float = 1.0
    max_tokens: int = 2048
    pairgen_k: int = 32
    pairgen_seed: int = 0
    tolerance: float = 1e-3
    strategies: tuple[str, ...] = ("aupair", "best_of_n")
    self_repair_feedback: int = 4
    self_repair_repairs: int = 7
    random_baseline_seed: int = 0
    wall_timeout: float = 10.0
    max_output_bytes: int = 1 << 20
    numeric_tolerance: float | None = None
    runner_cmd: tuple[str, ...] = ()
    prompt_style: str = DEFAULT_STYLE

    # workdir artifact layout
    def curated_path(self) -> Path:
        return self.workdir / "curated.jsonl"

    def curation_report_path(self) -> Path:
        return self.workdir / "curation_report.json"

    def split_path(self) -> Path:
        return self.workdir / "split.json"

    def pairs_path(self) -> Path:
        return self.workdir / "pairs.jsonl"

    def matrix_path(self) -> Path:
        return self.workdir / "fix_quality.matrix"

    def aupairs_path(self) -> Path:
        return self.workdir / "aupairs.jsonl"

    def run_log_path(self) -> Path:
        return self.workdir / "run_log.jsonl"

    def result_path(self, strategy: str, n: int) -> Path:
        return self.workdir / "results" / f"{strategy}_n{n}.jsonl"

    def metrics_path(self, strategy: str, n: int) -> Path:
        return self.workdir / "metrics" / f"{strategy}_n{n}.json"

    def scaling_csv_path(self) -> Path:
        return self.workdir / "metrics" / "scaling.csv"

    def reports_dir(self) -> Path:
        return self.workdir / "reports"


def _get(raw: dict, section: str, key: str, default: Any) -> Any:
    return raw.get(section, {}).get(key, default)


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate the TOML config; every problem is reported at once."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc

    config_dir = path.parent.resolve()
    errors: list[str] = []

    def resolve(value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else config_dir / p

    dataset_value = _get(raw, "dataset", "problems", None)
    if not dataset_value:
        errors.append("dataset.problems is required")
        dataset_path = config_dir / "missing"
    else:
        dataset_path = resolve(dataset_value)
        if not dataset_path.exists():
            errors.append(f"dataset.problems does not exist: {dataset_path}")

    workdir = resolve(_get(raw, "workdir", "path", "artifacts"))

    ratios_raw = _get(raw, "split", "ratios", [0.375, 0.125, 0.5])
    ratios = tuple(float(r) for r in ratios_raw) if len(ratios_raw) == 3 else (0.0, 0.0, 0.0)
    if len(ratios_raw) != 3:
        errors.append("split.ratios must have exactly three entries")
    elif abs(sum(ratios) - 1.0) > 1e-9:
        errors.append(f"split.ratios must sum to 1, got {sum(ratios)}")

    backend = _get(raw, "gateway", "backend", "scripted")
    if backend not in ("scripted", "replay", "http"):
        errors.append(f"gateway.backend must be scripted, replay, or http; got {backend!r}")

    gateway_section = raw.get("gateway", {})
    scripted_ruleset = gateway_section.get("scripted", {}).get("ruleset")
    if backend == "scripted":
        if not scripted_ruleset:
            errors.append("gateway.scripted.ruleset is required for the scripted backend")
        elif not resolve(scripted_ruleset).exists():
            errors.append(f"gateway.scripted.ruleset does not exist: {resolve(scripted_ruleset)}")
    http_section = gateway_section.get("http", {})
    if backend == "http" and not http_section.get("url"):
        errors.append("gateway.http.url is required for the http backend")

    budgets = raw.get("budgets", {})
    budget_values = {
        "curation": budgets.get("curation", 10_000),
        "phase1": budgets.get("phase1", 10_000),
        "inference": budgets.get("inference", 32),
    }
    for name, value in budget_values.items():
        if not isinstance(value, int) or value <= 0:
            errors.append(f"budgets.{name} must be a positive integer")

    tolerance = float(_get(raw, "extraction", "tolerance", 1e-3))
    if tolerance <= 0:
        errors.append("extraction.tolerance must be positive")

    strategies = tuple(_get(raw, "inference", "strategies", ["aupair", "best_of_n"]))
    known_strategies = {"aupair", "best_of_n", "self_repair", "random_pairs"}
    for strategy in strategies:
        if strategy not in known_strategies:
            errors.append(f"inference.strategies: unknown strategy {strategy!r}")

    style = _get(raw, "prompts", "style", DEFAULT_STYLE)
    if style not in STYLES:
        errors.append(f"prompts.style must be one of {STYLES}, got {style!r}")

    wall_timeout = float(_get(raw, "limits", "wall_timeout", 10.0))
    if wall_timeout <= 0:
        errors.append("limits.wall_timeout must be positive")

    vocab = _get(raw, "dataset", "difficulty_vocab", None)

    if errors:
        raise ConfigError(f"{path}:\n" + "\n".join(f"  - {e}" for e in errors))

    return RunConfig(
        dataset_path=dataset_path,
        workdir=workdir,
        config_dir=config_dir,
        digest=sha256_text(canonical_json(raw)),
        difficulty_vocab=tuple(vocab) if vocab else None,
        split_ratios=ratios,
        split_seed=int(_get(raw, "split", "seed", 0)),
        gateway=GatewayConfig(
            backend=backend,
            parallelism=int(_get(raw, "gateway", "parallelism", 1)),
            scripted_ruleset=scripted_ruleset,
            replay_store=gateway_section.get("replay", {}).get("store", "replay"),
            replay_strict=bool(gateway_section.get("replay", {}).get("strict", True)),
            http=dict(http_section),
        ),
        budget_curation=budget_values["curation"],
        budget_phase1=budget_values["phase1"],
        budget_inference=budget_values["inference"],
        temperature=float(_get(raw, "sampling", "temperature", 1.0)),
        max_tokens=int(_get(raw, "sampling", "max_tokens", 2048)),
        pairgen_k=int(_get(raw, "pairgen", "k", 32)),
        pairgen_seed=int(_get(raw, "pairgen", "seed", 0)),
        tolerance=tolerance,
        strategies=strategies,
        self_repair_feedback=int(_get(raw, "inference", "self_repair_feedback", 4)),
        self_repair_repairs=int(_get(raw, "inference", "self_repair_repairs", 7)),
        random_baseline_seed=int(_get(raw, "inference", "random_baseline_seed", 0)),
        wall_timeout=wall_timeout,
        max_output_bytes=int(_get(raw, "limits", "max_output_bytes", 1 << 20)),
        numeric_tolerance=(
            float(_get(raw, "limits", "numeric_tolerance", None))
            if _get(raw, "limits", "numeric_tolerance", None) is not None
            else None
        ),
        runner_cmd=tuple(_get(raw, "limits", "runner_cmd", [])),
        prompt_style=style,
    )


def resolve_in_config_dir(config: RunConfig, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else config.config_dir / p
