"""Experiment configuration: flat ``key = value`` INI sections with task defaults.

Every key a run can read is declared in :data:`DEFAULTS`; unknown sections or
keys are rejected with :class:`ConfigError`. Overrides use dotted keys
(``train.epochs=5``). The resolved config is written next to run outputs
as ``config.ini`` and is sufficient to reproduce the run.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

TASKS = ("art", "lcd")

# the type of each default is the type of its key
_COMMON = {
    "run": {"task": "art", "seed": 0},
    "data": {"train_path": "", "valid_path": "", "seed": -1},
    "init": {"strategy": "learned", "noise_std": 0.0},
    "train": {"epochs": 200, "batch_size": 128, "learning_rate": 1e-3, "clip_norm": 0.0,
              "eval_batch_size": 1000},
}

DEFAULTS = {
    "art": {
        **_COMMON,
        "data": {**_COMMON["data"], "n_train": 100000, "n_valid": 20000, "pairs": 4},
        "model": {"hidden_size": 50, "embedding_dim": 64, "fw_decay": 0.95,
                  "fw_learning_rate": 0.5, "fw_steps": 1},
    },
    "lcd": {
        **_COMMON,
        "run": {"task": "lcd", "seed": 0},
        "data": {**_COMMON["data"], "n_train": 1000, "n_valid": 500, "t_f": 25},
        "init": {"strategy": "learned-distribution", "noise_std": 0.0},
        "train": {**_COMMON["train"], "epochs": 65, "learning_rate": 2e-4},
        "model": {"hidden_size": 128, "context_hidden": 50, "append_period": "auto",
                  "sigma_init": -3.0},
    },
}

_CHOICES = {
    "run.task": TASKS,
    "init.strategy": ("zero", "free", "learned", "learned-distribution"),
    "model.append_period": ("auto", "yes", "no"),
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _coerce(key: str, raw, default):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                value = raw
            elif str(raw).lower() in ("1", "true", "yes", "on"):
                value = True
            elif str(raw).lower() in ("0", "false", "no", "off"):
                value = False
            else:
                raise ValueError(raw)
        elif isinstance(default, int):
            value = int(raw)
        elif isinstance(default, float):
            value = float(raw)
        else:
            value = str(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot parse {raw!r} as {type(default).__name__}") from None
    choices = _CHOICES.get(key)
    if choices is not None and value not in choices:
        raise ConfigError(key, f"{value!r} is not one of {', '.join(choices)}")
    return value


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, object]] = field(default_factory=dict)

    @property
    def task(self) -> str:
        return self.values["run"]["task"]

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    def get(self, dotted: str):
        return self[dotted]

    @property
    def data_seed(self) -> int:
        s = self["data.seed"]
        return self["run.seed"] if s < 0 else s

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, items in self.values.items():
            parser[section] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in items.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())

    def validate(self) -> None:
        if self["run.seed"] < 0:
            raise ConfigError("run.seed", "must be >= 0")
        for key in ("train.epochs",):
            if self[key] < 0:
                raise ConfigError(key, "must be >= 0")
        for key in ("train.batch_size", "train.eval_batch_size", "data.n_train", "data.n_valid",
                    "model.hidden_size"):
            if self[key] < 1:
                raise ConfigError(key, "must be >= 1")
        if self["train.learning_rate"] <= 0:
            raise ConfigError("train.learning_rate", "must be positive")
        if self["init.noise_std"] < 0:
            raise ConfigError("init.noise_std", "must be >= 0")
        if self.task == "art":
            if not 1 <= self["data.pairs"] <= 26:
                raise ConfigError("data.pairs", "must lie in [1, 26]")
            if not 0 <= self["model.fw_decay"] < 1:
                raise ConfigError("model.fw_decay", "must lie in [0, 1)")
            if self["model.fw_steps"] < 1:
                raise ConfigError("model.fw_steps", "must be >= 1")
        elif self["data.t_f"] < 2:
            raise ConfigError("data.t_f", "must be >= 2")


def parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(item, "override must look like section.key=value")
    key, value = item.split("=", 1)
    key = key.strip()
    if key.count(".") != 1:
        raise ConfigError(key, "override key must be section.key")
    return key, value


def resolve(task: str | None = None, path=None, overrides=(), seed: int | None = None,
            text: str | None = None) -> ExperimentConfig:
    """Merge task defaults, an optional INI file (or INI ``text``) and dotted overrides.

    The task is taken from ``task``, else the file's ``run.task``, else
    an override, else ``art``.
    """
    raw: dict[str, dict[str, str]] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise ConfigError(str(path), f"cannot open config: {err.strerror}") from None
    if text is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as err:
            raise ConfigError(str(path or "config"), f"unreadable config: {err}") from None
        for section in parser.sections():
            raw[section] = dict(parser[section])
    for item in overrides:
        key, value = parse_override(item)
        section, name = key.split(".")
        raw.setdefault(section, {})[name] = value
    if seed is not None:
        raw.setdefault("run", {})["seed"] = str(seed)

    chosen = task or raw.get("run", {}).get("task", "art")
    chosen = _coerce("run.task", chosen, "")
    if task is not None and raw.get("run", {}).get("task", task).strip() != task:
        raise ConfigError("run.task", f"config says {raw['run']['task']!r} but --task is {task!r}")
    schema = DEFAULTS[chosen]

    values = {section: dict(items) for section, items in schema.items()}
    values["run"]["task"] = chosen
    for section, items in raw.items():
        if section not in schema:
            raise ConfigError(section, "unknown section")
        for name, value in items.items():
            if name not in schema[section]:
                raise ConfigError(f"{section}.{name}", "unknown key")
            values[section][name] = _coerce(f"{section}.{name}", value, schema[section][name])
    cfg = ExperimentConfig(values)
    cfg.validate()
    return cfg
