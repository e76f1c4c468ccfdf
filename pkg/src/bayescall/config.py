"""Run configuration: documented defaults, flat key=value files, overrides.

A config file holds `key = value` lines (# starts a comment); keys are
namespaced like `sim.error_rate`.  Every key has a default, command-line
flags override file values, and each command echoes the fully resolved
configuration next to its outputs so a run can be reproduced from its
artifacts alone.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ConfigError
from .pileup import SimulatorConfig
from .training import TrainConfig

__all__ = ["EvalSettings", "RunConfig", "CONFIG_KEYS",
           "load_config", "default_config"]


@dataclass(frozen=True)
class EvalSettings:
    n_mc: int = 50
    tau: float = 0.6
    mask_lo: int = 31
    mask_hi: int = 100


@dataclass(frozen=True)
class RunConfig:
    sim: SimulatorConfig
    n_examples: int
    hidden1: int
    hidden2: int
    dense_units: int
    train: TrainConfig
    eval: EvalSettings
    dataset_path: str
    checkpoint_path: str
    report_dir: str


# key -> (section attribute, field, parser)
def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


CONFIG_KEYS: dict[str, tuple[str, str, type]] = {
    "sim.depth": ("sim", "depth", int),
    "sim.width": ("sim", "width", int),
    "sim.error_rate": ("sim", "error_rate", float),
    "sim.het_prob": ("sim", "het_prob", float),
    "sim.vaf_lo": ("sim", "vaf_lo", float),
    "sim.vaf_hi": ("sim", "vaf_hi", float),
    "sim.positive_fraction": ("sim", "positive_fraction", float),
    "sim.mean_coverage": ("sim", "mean_coverage", float),
    "sim.seed": ("sim", "seed", int),
    "sim.n": ("", "n_examples", int),
    "model.hidden1": ("", "hidden1", int),
    "model.hidden2": ("", "hidden2", int),
    "model.dense_units": ("", "dense_units", int),
    "train.epochs": ("train", "epochs", int),
    "train.batch_size": ("train", "batch_size", int),
    "train.seed": ("train", "seed", int),
    "train.split_fraction": ("train", "split_fraction", float),
    "train.prior_sigma": ("train", "prior_sigma", float),
    "train.learning_rate": ("train", "learning_rate", float),
    "train.beta1": ("train", "beta1", float),
    "train.beta2": ("train", "beta2", float),
    "train.adam_eps": ("train", "adam_eps", float),
    "eval.n_mc": ("eval", "n_mc", int),
    "eval.tau": ("eval", "tau", float),
    "eval.mask_lo": ("eval", "mask_lo", int),
    "eval.mask_hi": ("eval", "mask_hi", int),
    "paths.dataset": ("", "dataset_path", str),
    "paths.checkpoint": ("", "checkpoint_path", str),
    "paths.report_dir": ("", "report_dir", str),
}


def default_config() -> RunConfig:
    return RunConfig(sim=SimulatorConfig(), n_examples=8000,
                     hidden1=32, hidden2=32, dense_units=32,
                     train=TrainConfig(), eval=EvalSettings(),
                     dataset_path="", checkpoint_path="", report_dir="")


def _apply(cfg: RunConfig, key: str, raw: str) -> RunConfig:
    if key not in CONFIG_KEYS:
        raise ConfigError(f"unknown config key: {key}")
    section, field, parser = CONFIG_KEYS[key]
    try:
        value = parser(raw.strip()) if parser is not str else raw.strip()
    except ValueError:
        raise ConfigError(
            f"bad value for {key}: {raw.strip()!r} (expected {parser.__name__})"
        ) from None
    if section == "":
        return replace(cfg, **{field: value})
    return replace(cfg, **{section: replace(getattr(cfg, section),
                                            **{field: value})})


def load_config(path: str | None = None,
                overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then file values, then overrides; later wins."""
    cfg = default_config()
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                if "=" not in text:
                    raise ConfigError(
                        f"{path}:{lineno}: expected 'key = value', got {text!r}")
                key, raw = text.split("=", 1)
                cfg = _apply(cfg, key.strip(), raw)
    for key, raw in (overrides or {}).items():
        cfg = _apply(cfg, key, raw)
    return cfg


def render_config(cfg: RunConfig) -> str:
    """The fully resolved configuration as a loadable key=value file."""
    lines = []
    for key in sorted(CONFIG_KEYS):
        section, field, _ = CONFIG_KEYS[key]
        holder = cfg if section == "" else getattr(cfg, section)
        lines.append(f"{key} = {getattr(holder, field)}")
    return "\n".join(lines) + "\n"
