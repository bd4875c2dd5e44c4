"""Top-level TOML configuration: backend(s), price table, prompt options,
bench thresholds, and sweep settings.

Precedence is CLI flags > TOML file > built-in defaults; the defaults keep
temperature 0, a 20,480-token context, parallelism 10, and a 30-minute
per-query timeout.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from .errors import UsageError
from .gateway import BackendConfig
from .prompts import DEFAULT_TEMPLATE_DIR, PromptOptions

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml


@dataclass
class BenchSettings:
    easy_max: int = 5
    medium_max: int = 8


@dataclass
class SweepSettings:
    task: str = "select_row"
    date_column: str = "birthday"
    new_column: str = "zodiac"
    scales: tuple = (50, 100)
    batch_sizes: tuple = (1, 50, None)  # None = ALL
    repeats: int = 10
    timeout_seconds: Optional[float] = None  # per run; None keeps the backend's


@dataclass
class EngineConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    judge: Optional[BackendConfig] = None
    prices: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    prompt_options: PromptOptions = field(default_factory=PromptOptions)
    template_dir: str = DEFAULT_TEMPLATE_DIR
    bench: BenchSettings = field(default_factory=BenchSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)


def _backend_from_table(table: dict) -> BackendConfig:
    known = {
        "endpoint", "model", "temperature", "max_context_tokens",
        "parallelism", "timeout_seconds", "retries", "api_key_env",
    }
    unknown = set(table) - known
    if unknown:
        raise UsageError(f"unknown backend config key(s): {sorted(unknown)}")
    return BackendConfig(**table)


def load_config(path: Optional[str] = None) -> EngineConfig:
    if path is None:
        return EngineConfig()
    with open(path, "rb") as fh:
        data = _toml.load(fh)

    cfg = EngineConfig()
    if "backend" in data:
        cfg.backend = _backend_from_table(data["backend"])
    if "judge" in data:
        cfg.judge = _backend_from_table(data["judge"])
    for model, entry in data.get("prices", {}).items():
        try:
            cfg.prices[model] = (float(entry["input"]), float(entry["output"]))
        except (KeyError, TypeError) as exc:
            raise UsageError(
                f"price for {model!r} needs 'input' and 'output' in $/1M tokens"
            ) from exc
    prompts = data.get("prompts", {})
    cfg.prompt_options = PromptOptions(
        cot=bool(prompts.get("cot", False)),
        examples=bool(prompts.get("examples", False)),
        example_count=int(prompts.get("example_count", 3)),
    )
    cfg.template_dir = prompts.get("template_dir", DEFAULT_TEMPLATE_DIR)
    bench = data.get("bench", {})
    cfg.bench = BenchSettings(
        easy_max=int(bench.get("easy_max", 5)),
        medium_max=int(bench.get("medium_max", 8)),
    )
    sweep = data.get("sweep", {})
    batch_sizes = tuple(
        None if b in ("all", 0) else int(b)
        for b in sweep.get("batch_sizes", [1, 50, "all"])
    )
    timeout = sweep.get("timeout_seconds")
    cfg.sweep = SweepSettings(
        task=sweep.get("task", "select_row"),
        date_column=sweep.get("date_column", "birthday"),
        new_column=sweep.get("new_column", "zodiac"),
        scales=tuple(int(s) for s in sweep.get("scales", [50, 100])),
        batch_sizes=batch_sizes,
        repeats=int(sweep.get("repeats", 10)),
        timeout_seconds=float(timeout) if timeout is not None else None,
    )
    if list(cfg.sweep.scales) != sorted(cfg.sweep.scales):
        raise UsageError("sweep scales must be ascending")
    if cfg.sweep.repeats < 1:
        raise UsageError("sweep repeats must be >= 1")
    return cfg
