"""Run configuration: key=value files, CLI overrides, and the echo record.

Every run's report embeds the full effective configuration, so the parser
is strict: unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError, IoFailure
from .trainer import LossWeights, TrainConfig


@dataclass(frozen=True)
class RunConfig:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 2e-4
    seed: int = 0
    depth: int = 1
    lambda_sim: float = 50.0
    lambda_h: float = 0.01
    lambda_b: float = 0.01
    lambda_q: float = 0.0001
    m: int = 4
    k: int = 256
    alternations: int = 1

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            alternations=self.alternations,
            seed=self.seed,
            depth=self.depth,
            num_books=self.m,
            book_size=self.k,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_sim=self.lambda_sim,
            lambda_h=self.lambda_h,
            lambda_b=self.lambda_b,
            lambda_q=self.lambda_q,
        )

    def echo_lines(self) -> list[str]:
        """One key=value line per field, stable order, for report embedding."""
        return [f"{field.name}={getattr(self, field.name)}" for field in fields(self)]


_FIELD_TYPES = {field.name: field.type for field in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind in ("int", int):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key}={raw!r} as {kind}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse `key = value` lines; # starts a comment; unknown keys fail."""
    parsed = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in parsed:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        parsed[key] = _coerce(key, raw)
    return parsed


def parse_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then config file values, then overrides (flags win)."""
    merged = {}
    if path is not None:
        merged.update(parse_config_file(path))
    for key, raw in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = _coerce(key, str(raw))
    try:
        return RunConfig(**merged)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
