"""Experiment configuration: flat `key = value` INI files with one section
level, two bundled profiles (desk and paper-faithful), and a round-trippable
writer.

Relative paths resolve against the config file's directory; the run output
directory resolves against $NCACF_OUTPUT_ROOT when that is set.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .models import (COMBINATIONS, COUPLINGS, FAMILIES, Hyperparams,
                     ModelVariant)

OUTPUT_ROOT_ENV = "NCACF_OUTPUT_ROOT"

PROFILES = {
    "desk": {},
    "paper-faithful": {
        "data.min_user_songs": 20,
        "data.min_item_users": 50,
        "hyperparams.embed_dim": 128,
        "hyperparams.hidden_width": 1024,
        "hyperparams.eta": 1e-4,
        "hyperparams.batch_items": 128,
        "hyperparams.max_epochs": 150,
        "hyperparams.pretrain_epochs": 100,
        "hyperparams.finetune_epochs": 100,
        "hyperparams.n_iters": 150,
        "eval.top_k": 50,
    },
}


@dataclass
class ExperimentConfig:
    # [data]
    triplets: str = "triplets.tsv"
    features: str | None = "features.tsv"
    prepared: str = "prepared"
    min_user_songs: int = 5
    min_item_users: int = 5
    # [variant]
    family: str = "wmf"
    coupling: str = "content_free"
    interaction: str | None = None  # defaulted from the family
    combination: str = "multiplication"
    q_hidden: int = 2
    output_activation: str = "sigmoid"
    # [hyperparams]
    hyper: Hyperparams = field(default_factory=Hyperparams)
    # [split]
    split_mode: str = "cold"
    num_folds: int = 10
    val_fraction: float = 0.2
    fold: int = 0
    # [eval]
    setting: str = "cold"
    top_k: int = 10
    # [sweep]
    grid_lambda_w: tuple[float, ...] = (0.1,)
    grid_lambda_h: tuple[float, ...] = (1.0,)
    # [synth]
    synth_users: int = 500
    synth_items: int = 400
    synth_k_true: int = 8
    synth_features: int = 20
    synth_noise: float = 0.1
    synth_density: float = 0.08
    # [run]
    seed: int = 42
    threads: int = 1
    profile: str = "desk"
    output: str = "run"

    def variant(self) -> ModelVariant:
        kind = self.interaction
        if kind is None:
            kind = "deep" if self.family in ("ncacf", "ncf") else "dot_product"
        if kind == "dot_product":
            # Tower settings are meaningless without a tower; normalize them
            # so configs and checkpoints compare cleanly.
            return ModelVariant(self.family, self.coupling, kind)
        return ModelVariant(self.family, self.coupling, kind, self.combination,
                            self.q_hidden, self.output_activation)

    def validate(self) -> "ExperimentConfig":
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.coupling not in COUPLINGS:
            raise ConfigError(f"unknown coupling {self.coupling!r}")
        if self.combination not in COMBINATIONS:
            raise ConfigError(f"unknown combination {self.combination!r}")
        if self.split_mode not in ("cold", "warm"):
            raise ConfigError(f"split mode must be cold or warm, got {self.split_mode!r}")
        if self.setting not in ("cold", "warm", "both"):
            raise ConfigError(f"eval setting must be cold, warm or both")
        if not (0 <= self.fold < self.num_folds):
            raise ConfigError(f"fold {self.fold} out of range for {self.num_folds} folds")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        self.variant()  # raises ConfigError on inconsistent variant specs
        return self


_SECTIONS = {
    "data": ("triplets", "features", "prepared", "min_user_songs", "min_item_users"),
    "variant": ("family", "coupling", "interaction", "combination", "q_hidden",
                "output_activation"),
    "hyperparams": tuple(f.name for f in fields(Hyperparams)),
    "split": ("split_mode", "num_folds", "val_fraction", "fold"),
    "eval": ("setting", "top_k"),
    "sweep": ("grid_lambda_w", "grid_lambda_h"),
    "synth": ("synth_users", "synth_items", "synth_k_true", "synth_features",
              "synth_noise", "synth_density"),
    "run": ("seed", "threads", "profile", "output"),
}

_INI_NAME = {
    "split_mode": "mode",
    "synth_users": "num_users",
    "synth_items": "num_items",
    "synth_k_true": "k_true",
    "synth_features": "num_features",
    "synth_noise": "noise",
    "synth_density": "density",
}


def _parse_value(name: str, raw: str, current):
    raw = raw.strip()
    if name in ("grid_lambda_w", "grid_lambda_h"):
        try:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"{name}: expected comma-separated floats, got {raw!r}")
    if name in ("features", "interaction") and raw.lower() in ("", "none"):
        return None
    kind = type(current) if current is not None else str
    try:
        if kind is bool:
            return raw.lower() in ("1", "true", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}")
    return raw


def load_config(path, profile: str | None = None, seed: int | None = None,
                threads: int | None = None, output: str | None = None) -> ExperimentConfig:
    """Parse an INI config; CLI overrides beat file values, which beat the
    profile defaults."""
    # strict=False lets a later section block override earlier keys, which
    # keeps appended overrides diff-friendly.
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                       strict=False)
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise ConfigError(f"config file {path!r} not found")

    raw: dict[str, str] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        known = _SECTIONS[section]
        ini_to_field = {_INI_NAME.get(name, name): name for name in known}
        for key, value in parser.items(section):
            if key not in ini_to_field:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            raw[ini_to_field[key]] = value

    chosen_profile = profile or raw.get("profile", "desk")
    if chosen_profile not in PROFILES:
        raise ConfigError(f"unknown profile {chosen_profile!r}")

    cfg = ExperimentConfig()
    hyper_kwargs = {}
    for dotted, value in PROFILES[chosen_profile].items():
        section, name = dotted.split(".")
        if section == "hyperparams":
            hyper_kwargs[name] = value
        else:
            setattr(cfg, name, value)
    cfg.hyper = replace(cfg.hyper, **hyper_kwargs)
    cfg.profile = chosen_profile

    hyper_fields = set(_SECTIONS["hyperparams"])
    hyper_updates = {}
    for name, value in raw.items():
        if name == "profile":
            continue
        if name in hyper_fields:
            hyper_updates[name] = _parse_value(name, value, getattr(cfg.hyper, name))
        else:
            setattr(cfg, name, _parse_value(name, value, getattr(cfg, name)))
    if hyper_updates:
        cfg.hyper = replace(cfg.hyper, **hyper_updates)

    if profile is not None:
        cfg.profile = profile
    if seed is not None:
        cfg.seed = seed
    if threads is not None:
        cfg.threads = threads
    if output is not None:
        cfg.output = output

    base = os.path.dirname(os.path.abspath(path))
    cfg.triplets = _resolve(cfg.triplets, base)
    if cfg.features is not None:
        cfg.features = _resolve(cfg.features, base)
    cfg.prepared = _resolve(cfg.prepared, base)
    out_root = os.environ.get(OUTPUT_ROOT_ENV, base)
    cfg.output = _resolve(cfg.output, out_root)
    return cfg.validate()


def _resolve(path: str, base: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base, path)


def write_config(path, cfg: ExperimentConfig) -> None:
    """Emit a config file that load_config parses back to an equal object."""
    lines = []
    for section, names in _SECTIONS.items():
        lines.append(f"[{section}]")
        for name in names:
            value = getattr(cfg.hyper, name) if section == "hyperparams" \
                else getattr(cfg, name)
            key = _INI_NAME.get(name, name)
            if value is None:
                lines.append(f"{key} = none")
            elif isinstance(value, tuple):
                lines.append(f"{key} = " + ",".join(repr(v) for v in value))
            elif isinstance(value, float):
                lines.append(f"{key} = {value!r}")
            else:
                lines.append(f"{key} = {value}")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
