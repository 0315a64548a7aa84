"""Plain key-value experiment configs.

One file drives both the generator and the trainer::

    # benchmark: drifting preferences, 2000 users
    data.users = 2000
    data.days = 10
    train.alpha = 0.05
    train.dims.state = 16
    train.dims.encoder_hidden = 32

Keys are dotted paths into :class:`GeneratorConfig` (``data.``) and
:class:`TrainConfig` (``train.``, with ``train.dims.`` reaching the model
sizes).  Values are parsed by the target field's declared type; unknown
keys, duplicates, and malformed lines are errors rather than surprises.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .datamodel import GeneratorConfig
from .losses import TrainConfig
from .models import ModelDims


@dataclass
class ExperimentConfig:
    data: GeneratorConfig
    train: TrainConfig


def parse_kv(text: str) -> dict[str, str]:
    """`key = value` lines; blank lines and `#` comments are skipped."""
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key or not value:
            raise ValueError(f"line {ln}: expected 'key = value', got {raw!r}")
        if key in out:
            raise ValueError(f"line {ln}: duplicate key {key!r}")
        out[key] = value
    return out


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    raise ValueError(f"{key}: expected true or false, got {raw!r}")


def _coerce(field: dataclasses.Field, raw: str, key: str):
    # field.type may be the annotation string or a live type object,
    # depending on how the defining module spells its annotations
    ftype = field.type
    if not isinstance(ftype, str):
        ftype = getattr(ftype, "__name__", None) or str(ftype)
    if ftype == "bool":
        return _parse_bool(raw, key)
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "str":
            return raw
        if ftype.startswith("tuple"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ValueError(f"{key}: cannot parse {raw!r} as {ftype}") from exc
    raise ValueError(f"{key}: unsupported config field type {ftype!r}")


def _fill(cls, values: dict[str, str], prefix: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for name, raw in values.items():
        if name not in fields:
            raise ValueError(f"unknown config key {prefix}{name!r}")
        kwargs[name] = _coerce(fields[name], raw, prefix + name)
    return cls(**kwargs)


def experiment_config(kv: dict[str, str]) -> ExperimentConfig:
    data_kv: dict[str, str] = {}
    train_kv: dict[str, str] = {}
    dims_kv: dict[str, str] = {}
    for key, value in kv.items():
        head, _, rest = key.partition(".")
        if head == "data" and rest:
            data_kv[rest] = value
        elif head == "train" and rest.startswith("dims."):
            dims_kv[rest[len("dims."):]] = value
        elif head == "train" and rest:
            train_kv[rest] = value
        else:
            raise ValueError(
                f"unknown config key {key!r}: expected data.* or train.*")
    if "dims" in train_kv:
        raise ValueError("set model sizes via train.dims.<field>, not train.dims")
    data = _fill(GeneratorConfig, data_kv, "data.")
    dims = _fill(ModelDims, dims_kv, "train.dims.")
    train = _fill(TrainConfig, train_kv, "train.")
    if dims_kv:
        train = dataclasses.replace(train, dims=dims)
    data.validate()
    train.validate()
    _check_consistent(data, train)
    return ExperimentConfig(data=data, train=train)


_LINKED_FIELDS = [
    # a model sized for different widths/vocabs than the generator emits
    # would silently push ids into the catch-all row, so refuse early
    ("data.feature_width", "feature_width", "train.dims.feature_width", "feature_width"),
    ("data.latent_dim", "latent_dim", "train.dims.query_feat", "query_feat"),
    ("data.n_items", "n_items", "train.dims.vocab_items", "vocab_items"),
    ("data.n_categories", "n_categories", "train.dims.vocab_categories", "vocab_categories"),
    ("data.n_shops", "n_shops", "train.dims.vocab_shops", "vocab_shops"),
    ("data.n_brands", "n_brands", "train.dims.vocab_brands", "vocab_brands"),
]


def _check_consistent(data: GeneratorConfig, train: TrainConfig) -> None:
    for data_key, data_field, dims_key, dims_field in _LINKED_FIELDS:
        a = getattr(data, data_field)
        b = getattr(train.dims, dims_field)
        if a != b:
            raise ValueError(
                f"config mismatch: {data_key} = {a} but {dims_key} = {b}")


def load_experiment_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return experiment_config(parse_kv(fh.read()))
