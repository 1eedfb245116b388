"""Run configuration files: INI-style sections of ``key = value`` lines.

Sections are ``[data]``, ``[model]``, ``[objective]``, ``[train]``, ``[eval]``
and, for grid search, ``[grid]``. Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from .objective import Hyperparams
from .trainer import GridSearchSpec, TrainConfig


class ConfigError(ValueError):
    pass


MODEL_KEYS = ("embed_dim", "hidden_dim", "n_blocks", "projector_dim", "token_dropout", "relu_before_bn",
              "bn_eps", "bn_momentum", "vocab_min_count", "vocab_max_size")
TRAIN_KEYS = ("learning_rate", "epochs", "batch_size", "optimizer", "beta1", "beta2", "adam_eps", "seed",
              "ablation_mode", "max_steps")
OBJECTIVE_KEYS = {"alpha": "alpha", "lambda": "lambda_", "r_a": "r_a", "r_b": "r_b",
                  "diag_sign_mode": "diag_sign_mode", "corr_mode": "corr_mode", "center": "center"}
DATA_KEYS = ("corpus", "pairs", "train_labeled", "test_labeled")
EVAL_KEYS = ("positive_threshold", "probe_l2", "probe_steps")
GRID_KEYS = {"alpha": "alpha", "lambda": "lambda_", "r_a": "r_a", "r_b": "r_b",
             "alpha_fine_step": "alpha_fine_step", "rate_fine_step": "rate_fine_step",
             "fine_radius": "fine_radius", "fine": "fine", "budget_steps": "budget_steps"}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: str | None = None
    pairs: str | None = None
    train_labeled: str | None = None
    test_labeled: str | None = None
    positive_threshold: float = 4.0
    probe_l2: float = 1e-3
    probe_steps: int = 500
    grid: GridSearchSpec | None = None

    def require_corpus(self) -> str:
        if not self.corpus:
            raise ConfigError("missing required field data.corpus (path to the training corpus)")
        return self.corpus


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_FIELD_TYPES.update({f.name: f.type for f in dataclasses.fields(Hyperparams)})
_FIELD_TYPES.update({"positive_threshold": "float", "probe_l2": "float", "probe_steps": "int"})


def _convert(name: str, raw: str, type_name: str):
    raw = raw.strip()
    optional = "None" in str(type_name)
    if optional and raw.lower() in ("", "none"):
        return None
    t = str(type_name).replace(" | None", "")
    try:
        if t == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
        if t.startswith("Sequence"):
            return tuple(float(x) for x in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {t}") from None
    return raw


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _set(cfg: RunConfig, section: str, key: str, raw: str) -> RunConfig:
    name = f"{section}.{key}"
    if section == "data" and key in DATA_KEYS:
        raw = raw.strip()
        return replace(cfg, **{key: None if raw.lower() in ("", "none") else raw})
    if section == "eval" and key in EVAL_KEYS:
        return replace(cfg, **{key: _convert(name, raw, _FIELD_TYPES[key])})
    if section in ("model", "train") and key in (MODEL_KEYS if section == "model" else TRAIN_KEYS):
        val = _convert(name, raw, _FIELD_TYPES[key])
        return replace(cfg, train=_validated(name, lambda: replace(cfg.train, **{key: val})))
    if section == "objective" and key in OBJECTIVE_KEYS:
        attr = OBJECTIVE_KEYS[key]
        val = _convert(name, raw, _FIELD_TYPES[attr])
        hp = _validated(name, lambda: replace(cfg.train.hp, **{attr: val}))
        return replace(cfg, train=replace(cfg.train, hp=hp))
    if section == "grid" and key in GRID_KEYS:
        attr = GRID_KEYS[key]
        ftype = {f.name: f.type for f in dataclasses.fields(GridSearchSpec)}[attr]
        return replace(cfg, grid=replace(cfg.grid or GridSearchSpec(), **{attr: _convert(name, raw, ftype)}))
    raise ConfigError(f"unknown config key {name!r}")


def _validated(name, build):
    try:
        return build()
    except ValueError as e:
        raise ConfigError(f"{name}: {e}") from None


def parse(text: str, base: RunConfig | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str  # keep key case
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    cfg = base or RunConfig()
    for section in cp.sections():
        if section not in ("data", "model", "objective", "train", "eval", "grid"):
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            cfg = _set(cfg, section, key, raw)
    return cfg


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse(text)


def apply_override(cfg: RunConfig, override: str) -> RunConfig:
    """``section.key=value``; a bare ``key=value`` works when the key names exactly one field."""
    if "=" not in override:
        raise ConfigError(f"override {override!r} is not of the form key=value")
    key, raw = override.split("=", 1)
    key = key.strip()
    if "." in key:
        section, key = key.split(".", 1)
    else:
        homes = [s for s, keys in (("data", DATA_KEYS), ("model", MODEL_KEYS), ("train", TRAIN_KEYS),
                                   ("objective", tuple(OBJECTIVE_KEYS)), ("eval", EVAL_KEYS)) if key in keys]
        if len(homes) != 1:
            raise ConfigError(f"override key {key!r} is unknown or ambiguous; use section.key")
        section = homes[0]
    return _set(cfg, section, key, raw)


def serialize(cfg: RunConfig) -> str:
    t = cfg.train
    lines = ["[data]"]
    lines += [f"{k} = {_fmt(getattr(cfg, k))}" for k in DATA_KEYS]
    lines += ["", "[model]"] + [f"{k} = {_fmt(getattr(t, k))}" for k in MODEL_KEYS]
    lines += ["", "[objective]"] + [f"{k} = {_fmt(getattr(t.hp, a))}" for k, a in OBJECTIVE_KEYS.items()]
    lines += ["", "[train]"] + [f"{k} = {_fmt(getattr(t, k))}" for k in TRAIN_KEYS]
    lines += ["", "[eval]"] + [f"{k} = {_fmt(getattr(cfg, k))}" for k in EVAL_KEYS]
    if cfg.grid is not None:
        lines += ["", "[grid]"] + [f"{k} = {_fmt(getattr(cfg.grid, a))}" for k, a in GRID_KEYS.items()]
    return "\n".join(lines) + "\n"


def hyperparams_fragment(hp: Hyperparams) -> str:
    """A ``[objective]`` section that loads on top of any run config."""
    return "[objective]\n" + "".join(f"{k} = {_fmt(getattr(hp, a))}\n" for k, a in OBJECTIVE_KEYS.items())


# Desk-scale settings used with the synthetic benchmark; tuned so a run takes
# seconds on one CPU. ``gen-synthetic`` writes these next to the generated data.
BENCHMARK_TEXT = """\
[model]
embed_dim = 32
hidden_dim = 32
n_blocks = 1
projector_dim = 64
token_dropout = true

[objective]
alpha = 1.0
lambda = 0.013
r_a = 0.1
r_b = 0.3

[train]
learning_rate = 0.003
epochs = 60
batch_size = 64
"""


def benchmark_config(base: RunConfig | None = None) -> RunConfig:
    return parse(BENCHMARK_TEXT, base)
