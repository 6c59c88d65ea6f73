"""
Run configuration files.

A run configuration is an INI file whose section names prefix the keys:

    [model]   ModelConfig fields
    [train]   TrainConfig fields
    [rollin]  shift_prob, masking, p, block_size
    [decode]  block_size, strategy, k
    [data]    train, eval (dataset paths)
    [run]     seed, output_dir

`[run] seed` is the only seed; it seeds the model, the training streams and
the roll-in policy. Unknown sections and keys are rejected.
"""

import configparser
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

from imputer.decoder import DecodeConfig
from imputer.errors import ConfigurationError
from imputer.model import ModelConfig
from imputer.policies import MaskingPolicy, RollinConfig
from imputer.trainer import TrainConfig

VERSION = "0.1.0"
RESOLVED_CONFIG = "resolved_config.ini"

_MODEL_KEYS = [f.name for f in dataclasses.fields(ModelConfig) if f.name != "seed"]
_TRAIN_KEYS = [f.name for f in dataclasses.fields(TrainConfig) if f.name not in ("seed", "rollin")]
_ROLLIN_KEYS = ["shift_prob", "masking", "p", "block_size"]
_DECODE_KEYS = [f.name for f in dataclasses.fields(DecodeConfig)]
_DATA_KEYS = ["train", "eval"]
_RUN_KEYS = ["seed", "output_dir", "version"]

SECTIONS = {
    "model": _MODEL_KEYS,
    "train": _TRAIN_KEYS,
    "rollin": _ROLLIN_KEYS,
    "decode": _DECODE_KEYS,
    "data": _DATA_KEYS,
    "run": _RUN_KEYS,
}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    train_data: Path | None = None
    eval_data: Path | None = None
    output_dir: Path = Path("run")
    seed: int = 0

    @property
    def rollin(self) -> RollinConfig:
        return self.train.rollin


def _coerce(section: str, key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if default is None:
            return None if raw.lower() in ("", "none") else int(raw)
    except ValueError:
        raise ConfigurationError(f"Invalid value for {section}.{key}: {raw!r}") from None
    return raw


def _section_values(parser, section: str, defaults) -> dict:
    values = {}
    if not parser.has_section(section):
        return values
    for key, raw in parser.items(section):
        values[key] = _coerce(section, key, raw, getattr(defaults, key))
    return values


def parse_run_config(text: str, base_dir: Path = Path(".")) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigurationError(f"Malformed config file: {err}") from None

    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"Unknown config section: [{section}]")
        for key in parser[section]:
            if key not in SECTIONS[section]:
                raise ConfigurationError(f"Unknown config key: {section}.{key}")

    run = parser["run"] if parser.has_section("run") else {}
    seed = _coerce("run", "seed", run.get("seed", "0"), 0)
    if "version" in run and run["version"] != VERSION:
        logging.warning(f"Config was resolved by version {run['version']}, running {VERSION}")

    model = ModelConfig(**_section_values(parser, "model", ModelConfig()), seed=seed)

    rollin_defaults = {"shift_prob": 0.2, "masking": "block", "p": 0.5, "block_size": 8}
    rollin_values = {
        key: _coerce("rollin", key, raw, rollin_defaults[key])
        for key, raw in (parser.items("rollin") if parser.has_section("rollin") else [])
    }
    rollin_values = {**rollin_defaults, **rollin_values}
    rollin = RollinConfig(
        shift_prob=rollin_values["shift_prob"],
        masking=MaskingPolicy(
            kind=rollin_values["masking"],
            p=rollin_values["p"],
            block_size=rollin_values["block_size"],
        ),
        seed=seed,
    )
    train = TrainConfig(**_section_values(parser, "train", TrainConfig()), rollin=rollin, seed=seed)
    decode = DecodeConfig(**_section_values(parser, "decode", DecodeConfig()))

    data = parser["data"] if parser.has_section("data") else {}

    def resolve(path):
        return None if not path else (base_dir / path.strip()).resolve()

    return RunConfig(
        model=model,
        train=train,
        decode=decode,
        train_data=resolve(data.get("train")),
        eval_data=resolve(data.get("eval")),
        output_dir=resolve(run.get("output_dir")) or (base_dir / "run").resolve(),
        seed=seed,
    )


def load_run_config(path: Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigurationError(f"Cannot read config file {path}: {err}") from None
    return parse_run_config(text, base_dir=path.parent)


def _format(value) -> str:
    return "none" if value is None else str(value)


def render_run_config(config: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser["model"] = {key: _format(getattr(config.model, key)) for key in _MODEL_KEYS}
    parser["train"] = {key: _format(getattr(config.train, key)) for key in _TRAIN_KEYS}
    masking = config.rollin.masking
    parser["rollin"] = {
        "shift_prob": _format(config.rollin.shift_prob),
        "masking": masking.kind,
        "p": _format(masking.p),
        "block_size": _format(masking.block_size),
    }
    parser["decode"] = {key: _format(getattr(config.decode, key)) for key in _DECODE_KEYS}
    parser["data"] = {
        "train": _format(config.train_data or ""),
        "eval": _format(config.eval_data or ""),
    }
    parser["run"] = {
        "seed": str(config.seed),
        "output_dir": str(config.output_dir),
        "version": VERSION,
    }
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def write_resolved_config(config: RunConfig, directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESOLVED_CONFIG
    path.write_text(render_run_config(config))
    logging.info(f"Wrote resolved config to {path.name}")
    return path
