"""Run configuration: INI-style ``key = value`` sections plus overrides.

Recognised sections are ``[generator]``, ``[train]`` and ``[eval]``.  A
``preset`` key in the first two picks the base values that the remaining
keys then override.  Unknown sections or keys are rejected so that a typo
never silently falls back to a default.
"""

import configparser
import dataclasses
from dataclasses import dataclass, field

from . import synthdata, trainer
from .errors import ConfigError


@dataclass(frozen=True)
class EvalOptions:
    seed: int = 0
    n_perm: int = 10_000

    def validate(self):
        if self.n_perm < 2:
            raise ConfigError(f"n_perm: need at least 2 permutations, got {self.n_perm}")
        return self


@dataclass(frozen=True)
class RunConfig:
    generator: synthdata.GeneratorConfig = field(default_factory=lambda: synthdata.PRESETS["hard"])
    train: trainer.TrainConfig = field(default_factory=lambda: trainer.PRESETS["desk"])
    eval: EvalOptions = field(default_factory=EvalOptions)
    generator_preset: str = "hard"
    train_preset: str = "desk"

    def validate(self):
        self.generator.validate()
        self.train.validate()
        self.eval.validate()
        return self

    def resolved(self):
        """Plain dict of every effective value, for echoing into artifacts."""
        return {
            "generator": {"preset": self.generator_preset, **dataclasses.asdict(self.generator)},
            "train": {"preset": self.train_preset, **dataclasses.asdict(self.train)},
            "eval": dataclasses.asdict(self.eval),
        }


_SECTIONS = {
    "generator": (synthdata.GeneratorConfig, synthdata.PRESETS),
    "train": (trainer.TrainConfig, trainer.PRESETS),
    "eval": (EvalOptions, None),
}


def _coerce(section, key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(text)
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


def _build(section, values):
    cls, presets = _SECTIONS[section]
    values = dict(values)
    preset = values.pop("preset", None)
    if presets is None:
        if preset is not None:
            raise ConfigError(f"{section}.preset: this section has no presets")
        base = cls()
    else:
        preset = preset or next(iter(presets))
        if preset not in presets:
            raise ConfigError(f"{section}.preset: unknown preset {preset!r}, choose from {sorted(presets)}")
        base = presets[preset]
    known = {f.name for f in dataclasses.fields(cls)}
    updates = {}
    for key, text in values.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown key")
        updates[key] = _coerce(section, key, text, getattr(base, key))
    return dataclasses.replace(base, **updates), preset


def parse_override(text):
    """``"train.eps=0.3"`` -> ``("train", "eps", "0.3")``."""
    head, sep, value = text.partition("=")
    section, dot, key = head.strip().partition(".")
    if not sep or not dot or not key:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    return section, key.strip(), value.strip()


def load_config(path=None, overrides=()):
    """Read ``path`` (optional), apply ``overrides`` and validate."""
    raw = {name: {} for name in _SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in raw:
                raise ConfigError(f"unknown section [{section}]")
            raw[section].update(parser.items(section))
    for item in overrides:
        section, key, value = parse_override(item) if isinstance(item, str) else item
        if section not in raw:
            raise ConfigError(f"unknown section {section!r} in override")
        raw[section][key] = str(value)
    gen, gen_preset = _build("generator", raw["generator"])
    train, train_preset = _build("train", raw["train"])
    ev, _ = _build("eval", raw["eval"])
    return RunConfig(gen, train, ev, gen_preset, train_preset).validate()


def write_config(cfg, path):
    """Write the resolved ``cfg`` as an INI file that :func:`load_config` reads back."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in cfg.resolved().items():
        parser[section] = {k: str(v) for k, v in values.items()}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
