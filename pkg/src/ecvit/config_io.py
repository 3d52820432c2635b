"""Flat key = value config files mirroring ModelConfig field names.

One `key = value` per line, `#` comments and blank lines allowed.
Tuples are comma-separated integers, booleans are true/false, the
optional heads override may be `none`. Unknown keys are errors.
"""

from dataclasses import fields

from .errors import ConfigError
from .pyramid import ModelConfig

_TUPLE_FIELDS = {"input_hw", "stage_dims", "depths", "heads"}
_BOOL_FIELDS = {"use_partition", "append_cls", "use_merging", "use_maxpool_tok", "use_bn_tok"}
_STR_FIELDS = {"activation", "tokenizer_variant"}


def _parse_value(key, raw):
    raw = raw.strip()
    if key in _TUPLE_FIELDS:
        if key == "heads" and raw.lower() == "none":
            return None
        try:
            return tuple(int(part.strip()) for part in raw.split(","))
        except ValueError:
            raise ConfigError([f"key {key!r}: expected comma-separated integers, got {raw!r}"])
    if key in _BOOL_FIELDS:
        if raw.lower() in ("true", "false"):
            return raw.lower() == "true"
        raise ConfigError([f"key {key!r}: expected true or false, got {raw!r}"])
    if key in _STR_FIELDS:
        return raw
    try:
        return int(raw)
    except ValueError:
        raise ConfigError([f"key {key!r}: expected an integer, got {raw!r}"])


def parse_config(text) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    values = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            problems.append(f"line {lineno}: unknown config key {key!r}")
            continue
        if key in values:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        values[key] = _parse_value(key, raw)
    if problems:
        raise ConfigError(problems)
    return ModelConfig(**values)


def dumps_config(config: ModelConfig) -> str:
    lines = []
    for f in fields(ModelConfig):
        val = getattr(config, f.name)
        if f.name in _TUPLE_FIELDS:
            text = "none" if val is None else ",".join(str(x) for x in val)
        elif f.name in _BOOL_FIELDS:
            text = "true" if val else "false"
        else:
            text = str(val)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(config))
