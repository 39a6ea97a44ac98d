"""Pipeline configuration: a TOML file with environment overrides.

Sections mirror the stages (``render``, ``tokenizer``, ``tokenizer_train``,
``reasoner``, ``reasoner_train``, ``filter``, ``scorer``, ``task``) plus
top-level ``work_dir`` and ``seed``.  An environment variable
``IMGCOT__<SECTION>__<KEY>`` (or ``IMGCOT__<KEY>`` for top-level keys)
overrides the file (explicit ``overrides`` win over both); its value is read as a TOML literal when possible and
as a plain string otherwise.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from imgcot.errors import ConfigError, ImgCoTError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_PREFIX = "IMGCOT__"


@dataclass(frozen=True)
class RenderSection:
    height: int = 64
    width: int = 64
    font_size: int = 2
    min_font_size: int = 1
    max_font_size: int = 8
    delimiters: tuple = ("\n",)
    margin: int = 1
    padding: int = 0
    blank_ceiling: float = 0.5


@dataclass(frozen=True)
class TokenizerSection:
    patch: int = 8
    channels: int = 3
    n_latent: int = 8
    dim: int = 64
    codebook_size: int = 256
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    beta: float = 0.25


@dataclass(frozen=True)
class TokenizerTrainSection:
    steps: int = 3000
    batch_size: int = 24
    lr: float = 2e-3
    warmup_frac: float = 0.15
    restarts: int = 0
    weight_decay: float = 0.0
    reinit_every: int = 50
    reinit_threshold: int = 1
    continuous_steps: int = 1500
    kmeans_iters: int = 20


@dataclass(frozen=True)
class ReasonerSection:
    dim: int | None = None
    layers: int = 4
    heads: int = 4
    context: int = 512
    requantize: bool = True
    max_text_len: int = 64
    mode: str = "imgcot"


@dataclass(frozen=True)
class ReasonerTrainSection:
    epochs: int = 150
    batch_size: int = 16
    lr: float = 2e-3
    warmup_frac: float = 0.15
    restarts: int = 0
    weight_decay: float = 0.1


@dataclass(frozen=True)
class FilterSection:
    gamma_file: str = ""
    aggregation: str = "mean"
    corpus_dir: str = ""
    delimiters: tuple = ("\n",)


@dataclass(frozen=True)
class ScorerSection:
    backend: str = "local"
    checkpoint: str = ""
    base_url: str = ""
    model: str = ""
    token: str = ""
    timeout: float = 30.0
    max_attempts: int = 3
    backoff: float = 0.5
    concurrency: int = 4
    # local scorer: a reasoner-shaped character LM trained on the corpus
    layers: int = 2
    epochs: int = 8
    lr: float = 2e-3


@dataclass(frozen=True)
class TaskSection:
    n_train: int = 2000
    n_test: int = 500
    min_hops: int = 3
    max_hops: int = 5
    min_distractors: int = 0
    max_distractors: int = 2


@dataclass(frozen=True)
class SweepSection:
    latent_counts: tuple = (1, 2, 4, 8, 16, 32)
    n_train: int = 400
    n_test: int = 100
    tokenizer_steps: int = 600
    continuous_steps: int = 300
    epochs: int = 20


SECTIONS = {
    "render": RenderSection,
    "tokenizer": TokenizerSection,
    "tokenizer_train": TokenizerTrainSection,
    "reasoner": ReasonerSection,
    "reasoner_train": ReasonerTrainSection,
    "filter": FilterSection,
    "scorer": ScorerSection,
    "task": TaskSection,
    "sweep": SweepSection,
}


@dataclass(frozen=True)
class PipelineConfig:
    work_dir: str = "work"
    seed: int = 0
    render: RenderSection = field(default_factory=RenderSection)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    tokenizer_train: TokenizerTrainSection = field(default_factory=TokenizerTrainSection)
    reasoner: ReasonerSection = field(default_factory=ReasonerSection)
    reasoner_train: ReasonerTrainSection = field(default_factory=ReasonerTrainSection)
    filter: FilterSection = field(default_factory=FilterSection)
    scorer: ScorerSection = field(default_factory=ScorerSection)
    task: TaskSection = field(default_factory=TaskSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    @property
    def work(self) -> Path:
        return Path(self.work_dir)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()

    # component configs -------------------------------------------------

    def render_config(self):
        from imgcot.render import RenderConfig

        return RenderConfig(**asdict(self.render))

    def tokenizer_config(self):
        from imgcot.vqtok import TokenizerConfig

        return TokenizerConfig(height=self.render.height, width=self.render.width, seed=self.seed,
                               **asdict(self.tokenizer))

    def tokenizer_settings(self):
        from imgcot.vqtok import TrainSettings

        return TrainSettings(seed=self.seed, **asdict(self.tokenizer_train))

    def reasoner_config(self, vocab_size: int):
        from imgcot.reasoner import ReasonerConfig

        r = self.reasoner
        return ReasonerConfig(vocab_size, self.tokenizer.dim, r.layers, r.heads, r.context, self.seed)

    def reasoner_settings(self):
        from imgcot.reasoner import ReasonerSettings

        return ReasonerSettings(seed=self.seed, **asdict(self.reasoner_train))

    def scorer_config(self, vocab_size: int):
        from imgcot.reasoner import ReasonerConfig

        return ReasonerConfig(vocab_size, self.tokenizer.dim, self.scorer.layers, self.reasoner.heads,
                              self.reasoner.context, self.seed)

    def scorer_settings(self):
        from imgcot.reasoner import ReasonerSettings

        rt = self.reasoner_train
        return ReasonerSettings(self.scorer.epochs, rt.batch_size, self.scorer.lr, rt.warmup_frac, rt.restarts,
                                rt.weight_decay, self.seed)

    def endpoint_config(self):
        from imgcot.lmclient import EndpointConfig

        s = self.scorer
        data = {k: getattr(s, k) for k in ("base_url", "model", "token", "timeout", "max_attempts", "backoff",
                                           "concurrency")}
        data["token"] = data["token"] or None
        return EndpointConfig.from_mapping(data)


def _coerce(value, default, name: str, problems: list):
    """Convert a parsed TOML/env value to the type of the field default."""
    if default is None:
        return value
    kind = type(default)
    try:
        if kind is bool:
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind is tuple:
            if isinstance(value, str):
                return (value,)
            return tuple(value)
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return kind(value)
    except (TypeError, ValueError):
        problems.append(f"{name}: expected {kind.__name__}, got {value!r}")
        return default


def _parse_env_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def load_config(path=None, env=None, overrides: dict | None = None) -> PipelineConfig:
    """Read ``path`` (optional), apply environment variables then ``overrides``, and validate."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError([f"config file not found: {p}"])
        try:
            data = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"{p}: {exc}"]) from None
    env = os.environ if env is None else env
    for key, raw in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        target = data
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = _parse_env_value(raw)
    for key, val in (overrides or {}).items():
        section, _, name = key.rpartition(".")
        (data.setdefault(section, {}) if section else data)[name] = val
    return build_config(data)


def build_config(data: dict) -> PipelineConfig:
    problems: list = []
    top = {}
    sections = {}
    for key, val in data.items():
        if key in SECTIONS:
            if not isinstance(val, dict):
                problems.append(f"[{key}] must be a table")
                continue
            cls = SECTIONS[key]
            known = {f.name: f for f in fields(cls)}
            kwargs = {}
            defaults = cls()
            for name, v in val.items():
                if name not in known:
                    problems.append(f"{key}.{name}: unknown setting")
                    continue
                kwargs[name] = _coerce(v, getattr(defaults, name), f"{key}.{name}", problems)
            sections[key] = replace(defaults, **kwargs)
        elif key in ("work_dir", "seed"):
            top[key] = _coerce(val, getattr(PipelineConfig, key), key, problems)
        else:
            problems.append(f"{key}: unknown setting")
    cfg = PipelineConfig(**top, **sections)
    problems.extend(validate(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: PipelineConfig) -> list:
    """Every violated constraint, as human-readable strings."""
    problems = []
    t, r = cfg.tokenizer, cfg.reasoner
    if t.n_latent < 1:
        problems.append("tokenizer.n_latent must be at least 1")
    if t.codebook_size < 1 or t.dim < 1:
        problems.append("tokenizer.codebook_size and tokenizer.dim must be positive")
    if r.dim is not None and r.dim != t.dim:
        problems.append(f"reasoner.dim ({r.dim}) must equal tokenizer.dim ({t.dim})")
    if t.heads < 1 or t.dim % max(t.heads, 1):
        problems.append("tokenizer.dim must be divisible by tokenizer.heads")
    if r.heads < 1 or t.dim % max(r.heads, 1):
        problems.append("tokenizer.dim must be divisible by reasoner.heads")
    if cfg.render.height % t.patch or cfg.render.width % t.patch:
        problems.append("render height and width must be divisible by tokenizer.patch")
    if r.mode not in ("imgcot", "limgcot"):
        problems.append(f"reasoner.mode must be 'imgcot' or 'limgcot', got {r.mode!r}")
    if cfg.filter.aggregation not in ("mean", "sum"):
        problems.append("filter.aggregation must be 'mean' or 'sum'")
    if cfg.scorer.backend not in ("local", "remote"):
        problems.append("scorer.backend must be 'local' or 'remote'")
    tt = cfg.tokenizer_train
    if tt.steps < 1 or not (0 <= tt.continuous_steps < tt.steps):
        problems.append("tokenizer_train.continuous_steps must lie in [0, steps)")
    if cfg.scorer.layers < 1 or cfg.scorer.epochs < 1:
        problems.append("scorer.layers and scorer.epochs must be positive")
    if cfg.reasoner_train.epochs < 1 or cfg.reasoner_train.batch_size < 1:
        problems.append("reasoner_train.epochs and batch_size must be positive")
    k = cfg.task
    if not (1 <= k.min_hops <= k.max_hops) or not (0 <= k.min_distractors <= k.max_distractors):
        problems.append("task hop and distractor ranges must be ordered and non-negative")
    if any(n < 1 for n in cfg.sweep.latent_counts):
        problems.append("sweep.latent_counts must all be at least 1")
    try:
        cfg.render_config()
    except ImgCoTError as exc:
        problems.append(f"render: {exc}")
    return problems
