from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

from dotenv import load_dotenv

from errors import ConfigError

load_dotenv()

GRANULARITIES = ("SVST", "LVLT", "LVST", "IT")
LONG_VIDEO_GRANULARITIES = frozenset({"LVLT", "LVST"})
DEFAULT_ITER_POLICY: dict[str, list[int]] = {
    "SVST": [1, 1],
    "LVLT": [3, 3],
    "LVST": [3, 1],
    "IT": [0, 1],
}
DEFAULT_SUMMARY_PROMPT = (
    "You will be given a few sentences which describe the content of several clips "
    "within a video. Here are the sentences: [SENTENCES]. Please summarize the provided "
    "sentences into a concise summary as short as possible of no more than twenty words."
)
DEFAULT_OPENAI_MODEL = "gpt-4o-mini"
TOKEN_ENV = "GEXIA_SUMMARIZER_TOKEN"


@dataclass(slots=True)
class EncoderConfig:
    frame_h: int = 32
    frame_w: int = 32
    patch_size: int = 16
    c_v: int = 32
    c_t: int = 32
    m: int = 64
    token_bytes: int = 2
    vocab_size: int = 256
    d_short: int = 4
    d_long: int = 8

    @property
    def patches_per_frame(self) -> int:
        return (self.frame_h // self.patch_size) * (self.frame_w // self.patch_size)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def max_frames(self) -> int:
        return max(self.d_short, self.d_long)

    def validate(self) -> None:
        if self.patch_size < 1 or self.frame_h < 1 or self.frame_w < 1:
            raise ConfigError("encoder frame and patch sizes must be positive")
        if self.frame_h % self.patch_size or self.frame_w % self.patch_size:
            raise ConfigError(
                f"encoder frame {self.frame_h}x{self.frame_w} is not divisible by "
                f"patch_size {self.patch_size}"
            )
        if not 1 <= self.d_short < self.d_long:
            raise ConfigError("encoder needs 1 <= d_short < d_long")
        if self.m < 2:
            raise ConfigError("encoder.m must leave room for BOS and EOS (m >= 2)")
        if self.c_v < 1 or self.c_t < 1:
            raise ConfigError("encoder feature widths must be positive")
        if self.vocab_size < 256:
            raise ConfigError("encoder.vocab_size must cover every byte value (>= 256)")
        if self.token_bytes not in (2, 4) or (self.vocab_size + 3) >= 256 ** self.token_bytes:
            raise ConfigError("encoder.token_bytes must be 2 or 4 and hold vocab_size + 3 ids")


@dataclass(slots=True)
class IamConfig:
    n_latents: int = 8
    width: int = 64
    heads: int = 1
    ln_eps: float = 1e-5

    def validate(self) -> None:
        if self.n_latents < 1 or self.width < 1:
            raise ConfigError("iam.n_latents and iam.width must be positive")
        if self.heads < 1 or self.width % self.heads:
            raise ConfigError("iam.heads must divide iam.width")
        if self.ln_eps <= 0:
            raise ConfigError("iam.ln_eps must be positive")


@dataclass(slots=True)
class TrainConfig:
    batch_size: int = 16
    steps: int = 2000
    lr_other: float = 1e-3
    lr_encoders: float = 1e-5
    encoder_mode: str = "small"
    weight_decay: float = 0.0
    schedule: str = "cosine"
    min_lr: float = 0.0
    temperature_init: float = 0.07
    mix_weights: dict[str, float] = field(default_factory=dict)
    checkpoint_every: int = 500

    def effective_lr_encoders(self) -> float:
        if self.encoder_mode == "freeze":
            return 0.0
        if self.encoder_mode == "equal":
            return self.lr_other
        return self.lr_encoders

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigError("train.batch_size must be >= 2 (the contrastive loss needs negatives)")
        if self.steps < 0:
            raise ConfigError("train.steps must be non-negative")
        if self.lr_other < 0 or self.lr_encoders < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.encoder_mode not in {"freeze", "small", "equal"}:
            raise ConfigError("train.encoder_mode must be one of: freeze, small, equal.")
        if self.schedule not in {"constant", "cosine"}:
            raise ConfigError("train.schedule must be one of: constant, cosine.")
        if self.temperature_init <= 0:
            raise ConfigError("train.temperature_init must be positive")
        for label, weight in self.mix_weights.items():
            if label not in GRANULARITIES:
                raise ConfigError(f"train.mix_weights has unknown granularity {label!r}")
            if weight < 0:
                raise ConfigError(f"train.mix_weights[{label}] must be non-negative")
        if self.checkpoint_every < 0:
            raise ConfigError("train.checkpoint_every must be non-negative")


@dataclass(slots=True)
class SummarizerConfig:
    kind: str = "extractive"
    provider: str = "openai"
    endpoint: str = ""
    model: str = DEFAULT_OPENAI_MODEL
    token_env: str = TOKEN_ENV
    max_words: int = 20
    timeout: float = 30.0
    retries: int = 3
    backoff_base: float = 1.0
    prompt_template: str = DEFAULT_SUMMARY_PROMPT
    prompt_template_file: str = ""
    cache_path: str = ""
    max_in_flight: int = 4
    fail_hard: bool = False

    def token(self) -> str | None:
        return _get_env_str(self.token_env, "") or None

    def resolved_prompt(self) -> str:
        if not self.prompt_template_file:
            return self.prompt_template
        path = Path(self.prompt_template_file)
        try:
            template = path.read_text(encoding="utf-8").strip()
        except OSError as exc:
            raise ConfigError(f"Cannot read prompt template file: {path}") from exc
        if "[SENTENCES]" not in template:
            raise ConfigError(f"Prompt template {path} has no [SENTENCES] placeholder")
        return template

    def validate(self, *, require_credentials: bool = True) -> None:
        if self.kind not in {"extractive", "remote_chat"}:
            raise ConfigError("summarizer.kind must be one of: extractive, remote_chat.")
        if self.provider not in {"openai", "groq", "gemini"}:
            raise ConfigError("summarizer.provider must be one of: openai, groq, gemini.")
        if self.max_words < 1:
            raise ConfigError("summarizer.max_words must be >= 1")
        if self.retries < 0 or self.timeout <= 0 or self.backoff_base <= 0:
            raise ConfigError("summarizer retries/timeout/backoff_base out of range")
        if self.max_in_flight < 1:
            raise ConfigError("summarizer.max_in_flight must be >= 1")
        if "[SENTENCES]" not in self.prompt_template:
            raise ConfigError("summarizer.prompt_template needs a [SENTENCES] placeholder")
        if self.kind == "remote_chat" and require_credentials:
            if self.token() is None:
                raise ConfigError(f"Missing {self.token_env} for the remote summarizer.")
            if self.provider == "openai" and not self.endpoint:
                raise ConfigError("Missing summarizer.endpoint for provider=openai.")


@dataclass(slots=True)
class GexConfig:
    min_group: int = 4
    max_children: int = 0
    random_fallback: bool = False
    random_k: int = 4
    random_n: int = 0
    with_images: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.min_group < 1:
            raise ConfigError("gex.min_group must be >= 1")
        if self.max_children == 1 or self.max_children < 0:
            raise ConfigError("gex.max_children must be 0 (whole group) or >= 2")
        if self.random_k < 2 or self.random_n < 0:
            raise ConfigError("gex.random_k must be >= 2 and gex.random_n >= 0")


@dataclass(slots=True)
class RunConfig:
    seed: int = 0
    dtype: str = "f32"
    run_dir: str = "runs/default"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    iam: IamConfig = field(default_factory=IamConfig)
    iter_policy: dict[str, list[int]] = field(
        default_factory=lambda: {key: list(value) for key, value in DEFAULT_ITER_POLICY.items()}
    )
    train: TrainConfig = field(default_factory=TrainConfig)
    summarizer: SummarizerConfig = field(default_factory=SummarizerConfig)
    gex: GexConfig = field(default_factory=GexConfig)

    def validate(self) -> None:
        if self.dtype not in {"f32", "f64"}:
            raise ConfigError("dtype must be one of: f32, f64.")
        self.encoder.validate()
        self.iam.validate()
        self.train.validate()
        self.summarizer.validate(require_credentials=False)
        self.gex.validate()
        for label, pair in self.iter_policy.items():
            if label not in GRANULARITIES:
                raise ConfigError(f"iter_policy has unknown granularity {label!r}")
            if len(pair) != 2 or any(int(count) < 0 for count in pair):
                raise ConfigError(f"iter_policy[{label}] must be two non-negative counts")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _get_env_str(name: str, default: str) -> str:
    value = os.getenv(name, default)
    if value is None:
        return default
    value = value.strip()
    return value if value else default


def _get_env_bool(name: str, default: bool) -> bool:
    raw = _get_env_str(name, "true" if default else "false").lower()
    if raw in {"1", "true", "yes", "on"}:
        return True
    if raw in {"0", "false", "no", "off"}:
        return False
    raise ConfigError(f"{name} must be a boolean (true/false), got: {raw!r}")


def log_level_from_env(default: str = "INFO") -> str:
    level = _get_env_str("GEXIA_LOG_LEVEL", default).upper()
    if level not in {"DEBUG", "INFO", "WARNING", "ERROR"}:
        raise ConfigError(f"GEXIA_LOG_LEVEL must be DEBUG, INFO, WARNING or ERROR, got {level!r}")
    return level


def progress_enabled_from_env() -> bool:
    return _get_env_bool("GEXIA_PROGRESS", True)


def _merge_strict(base: dict[str, Any], update: dict[str, Any], prefix: str = "") -> None:
    for key, value in update.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"Unknown config key: {dotted}")
        # Free-form maps: keys are validated by the section itself.
        if dotted in {"iter_policy", "train.mix_weights"}:
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted} must be an object")
            base[key] = {**base[key], **value} if dotted == "iter_policy" else dict(value)
            continue
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted} must be an object")
            _merge_strict(base[key], value, prefix=f"{dotted}.")
        else:
            base[key] = value


def _parse_override(item: str) -> dict[str, Any]:
    if "=" not in item:
        raise ConfigError(f"Override must look like key=value, got: {item!r}")
    dotted, raw = item.split("=", 1)
    try:
        value: Any = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    nested: dict[str, Any] = {}
    cursor = nested
    parts = [part for part in dotted.strip().split(".") if part]
    if not parts:
        raise ConfigError(f"Override has an empty key: {item!r}")
    for part in parts[:-1]:
        cursor = cursor.setdefault(part, {})
    cursor[parts[-1]] = value
    return nested


def _build(cls: type, payload: dict[str, Any]) -> Any:
    kwargs: dict[str, Any] = {}
    for spec in fields(cls):
        value = payload[spec.name]
        default = spec.default_factory() if callable(spec.default_factory) else spec.default  # type: ignore[misc]
        if is_dataclass(default):
            kwargs[spec.name] = _build(type(default), value)
        else:
            kwargs[spec.name] = _coerce(spec.name, value, default)
    return cls(**kwargs)


def _coerce(name: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string, got {value!r}")
        return value
    return value


def _apply_env(payload: dict[str, Any]) -> None:
    summarizer = payload["summarizer"]
    summarizer["endpoint"] = _get_env_str("GEXIA_SUMMARIZER_ENDPOINT", summarizer["endpoint"])
    summarizer["model"] = _get_env_str("GEXIA_SUMMARIZER_MODEL", summarizer["model"])
    summarizer["provider"] = _get_env_str(
        "GEXIA_SUMMARIZER_PROVIDER", summarizer["provider"]
    ).lower()


def load_run_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
) -> RunConfig:
    """Defaults <- config file <- environment <- `key=value` overrides (flags win)."""
    payload = RunConfig().to_dict()
    if path is not None:
        source = Path(path)
        try:
            loaded = json.loads(source.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"Cannot read config file: {source}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config file {source} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config file {source} must hold a JSON object")
        _merge_strict(payload, loaded)
    _apply_env(payload)
    for item in overrides or []:
        _merge_strict(payload, _parse_override(item))
    return _finish(payload)


def run_config_from_dict(payload: dict[str, Any]) -> RunConfig:
    """Rebuild a RunConfig from `to_dict()` output (checkpoint metadata, config echoes)."""
    merged = RunConfig().to_dict()
    _merge_strict(merged, payload)
    return _finish(merged)


def _finish(payload: dict[str, Any]) -> RunConfig:
    config = _build(RunConfig, payload)
    try:
        config.iter_policy = {
            label: [int(count) for count in pair] for label, pair in config.iter_policy.items()
        }
        config.train.mix_weights = {
            label: float(weight) for label, weight in config.train.mix_weights.items()
        }
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"iter_policy / train.mix_weights hold non-numeric values: {exc}") from exc
    config.validate()
    return config


def echo_run_config(config: RunConfig, run_dir: str | Path) -> Path:
    target = Path(run_dir) / "effective_config.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    return target
