"""Config files: INI-style sections parsed into typed run configuration.

Sections are [model], [mt], [train], [data] plus an optional [run] block
(seed) written into resolved snapshots.  Unknown sections or keys are a
hard error, as are malformed values.  `--set section.key=value` overrides
reuse the same parsing, and :func:`snapshot` writes every resolved key
back out so a snapshot reproduces the run exactly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from .model import ModelConfig, PRESETS
from .neuron import MTConfig
from .train import TrainConfig


class ConfigError(ValueError):
    """Raised for unknown keys, bad values or inconsistent settings."""


@dataclass
class DataConfig:
    dataset: str = "synth"
    root: str = ""
    train_limit: int = 0
    test_limit: int = 0
    synth_train: int = 512
    synth_test: int = 256
    synth_classes: int = 10
    synth_noise: float = 0.6
    synth_seed: int = 1234

    def __post_init__(self):
        if self.dataset not in ("synth", "cifar10"):
            raise ConfigError(f"data.dataset must be synth or cifar10, got {self.dataset!r}")


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: DataConfig
    seed: int = 0


def _parse_bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("true", "1", "yes", "on"):
        return True
    if s in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _parse_int_list(v: str) -> tuple[int, ...]:
    s = v.strip()
    if not s or s.lower() == "none":
        return ()
    return tuple(int(x) for x in s.split(","))


def _parse_float_list(v: str) -> tuple[float, ...]:
    s = v.strip()
    if not s or s.lower() == "none":
        return ()
    return tuple(float(x) for x in s.split(","))


def _parse_shape(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.strip().lower().split("x"))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(x) for x in value) if value else "none"
    return str(value)


# (section, key) -> (parser, default)
SCHEMA = {
    ("model", "preset"): (str, ""),
    ("model", "arch"): (str, "vgg"),
    ("model", "conv_counts"): (_parse_int_list, (1, 1)),
    ("model", "filters"): (_parse_int_list, (16, 32)),
    ("model", "fc_widths"): (_parse_int_list, (64,)),
    ("model", "blocks_per_stage"): (int, 3),
    ("model", "steps"): (int, 1),
    ("model", "output_mode"): (str, "membrane"),
    ("model", "neuron"): (str, "plif"),
    ("model", "v_th"): (float, 1.0),
    ("model", "a_sg"): (float, 1.0),
    ("model", "a_init"): (float, 1.0),
    ("model", "input"): (_parse_shape, (3, 32, 32)),
    ("model", "classes"): (int, 10),
    ("model", "pool"): (str, "avg"),
    ("model", "voting_group"): (int, 10),
    ("model", "dtype"): (str, "float32"),
    ("mt", "deltas"): (_parse_float_list, ()),
    ("mt", "scope"): (str, "conv_only"),
    ("mt", "apply_to_encoder"): (_parse_bool, True),
    ("train", "epochs"): (int, 40),
    ("train", "batch_size"): (int, 128),
    ("train", "lr"): (float, 0.1),
    ("train", "momentum"): (float, 0.9),
    ("train", "lr_decay_epochs"): (_parse_int_list, (100,)),
    ("train", "lr_decay_factor"): (float, 0.1),
    ("train", "loss"): (str, "softmax_ce"),
    ("train", "augment"): (_parse_bool, True),
    ("data", "dataset"): (str, "synth"),
    ("data", "root"): (str, ""),
    ("data", "train_limit"): (int, 0),
    ("data", "test_limit"): (int, 0),
    ("data", "synth_train"): (int, 512),
    ("data", "synth_test"): (int, 256),
    ("data", "synth_classes"): (int, 10),
    ("data", "synth_noise"): (float, 0.6),
    ("data", "synth_seed"): (int, 1234),
    ("run", "seed"): (int, 0),
}


def _read_ini(path: str) -> dict[tuple[str, str], str]:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    raw: dict[tuple[str, str], str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            raw[(section, key)] = value
    return raw


def _resolve(raw: dict[tuple[str, str], str]) -> dict[tuple[str, str], object]:
    for section, key in raw:
        if (section, key) not in SCHEMA:
            raise ConfigError(f"unknown config key [{section}] {key}")
    values: dict[tuple[str, str], object] = {}
    for sk, (parse, default) in SCHEMA.items():
        if sk in raw:
            try:
                values[sk] = parse(raw[sk])
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for [{sk[0]}] {sk[1]}: {raw[sk]!r} ({exc})")
        else:
            values[sk] = default
    preset_name = values[("model", "preset")]
    if preset_name:
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown model preset {preset_name!r}")
        base = PRESETS[preset_name]
        defaults = {
            ("model", "arch"): base.arch,
            ("model", "conv_counts"): base.conv_counts,
            ("model", "filters"): base.filters,
            ("model", "fc_widths"): base.fc_widths,
            ("model", "blocks_per_stage"): base.blocks_per_stage,
            ("model", "input"): base.input_shape,
            ("model", "classes"): base.class_count,
        }
        for sk, preset_val in defaults.items():
            if sk not in raw:
                values[sk] = preset_val
    return values


def _build(values: dict[tuple[str, str], object]) -> RunConfig:
    v = values
    try:
        mt = MTConfig(deltas=v[("mt", "deltas")], scope=v[("mt", "scope")],
                      apply_to_encoder=v[("mt", "apply_to_encoder")])
        model = ModelConfig(
            arch=v[("model", "arch")],
            conv_counts=v[("model", "conv_counts")],
            filters=v[("model", "filters")],
            fc_widths=v[("model", "fc_widths")],
            blocks_per_stage=v[("model", "blocks_per_stage")],
            steps=v[("model", "steps")],
            output_mode=v[("model", "output_mode")],
            neuron=v[("model", "neuron")],
            v_th=v[("model", "v_th")],
            a_sg=v[("model", "a_sg")],
            a_init=v[("model", "a_init")],
            mt=mt,
            input_shape=v[("model", "input")],
            class_count=v[("model", "classes")],
            pool=v[("model", "pool")],
            voting_group=v[("model", "voting_group")],
            dtype=v[("model", "dtype")],
        )
        schedule = tuple((e, v[("train", "lr_decay_factor")])
                         for e in v[("train", "lr_decay_epochs")])
        train = TrainConfig(
            epochs=v[("train", "epochs")],
            batch_size=v[("train", "batch_size")],
            lr=v[("train", "lr")],
            momentum=v[("train", "momentum")],
            schedule=schedule,
            loss=v[("train", "loss")],
            augment=v[("train", "augment")],
        )
        data = DataConfig(
            dataset=v[("data", "dataset")],
            root=v[("data", "root")],
            train_limit=v[("data", "train_limit")],
            test_limit=v[("data", "test_limit")],
            synth_train=v[("data", "synth_train")],
            synth_test=v[("data", "synth_test")],
            synth_classes=v[("data", "synth_classes")],
            synth_noise=v[("data", "synth_noise")],
            synth_seed=v[("data", "synth_seed")],
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc))
    return RunConfig(model=model, train=train, data=data, seed=int(v[("run", "seed")]))


def load_config(path: str, overrides: list[str] | None = None,
                seed: int | None = None) -> RunConfig:
    raw = _read_ini(path)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"override key must be section.key, got {dotted!r}")
        section, key = dotted.split(".", 1)
        if (section, key) not in SCHEMA:
            raise ConfigError(f"unknown config key [{section}] {key}")
        raw[(section, key)] = value
    values = _resolve(raw)
    cfg = _build(values)
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


def snapshot(cfg: RunConfig) -> str:
    """Render the fully resolved configuration, including the seed, as an
    INI document that loads back to an identical RunConfig."""
    m, t, d = cfg.model, cfg.train, cfg.data
    lines = ["[model]"]
    lines += [f"arch = {m.arch}",
              f"conv_counts = {_fmt(m.conv_counts)}",
              f"filters = {_fmt(m.filters)}",
              f"fc_widths = {_fmt(m.fc_widths)}",
              f"blocks_per_stage = {m.blocks_per_stage}",
              f"steps = {m.steps}",
              f"output_mode = {m.output_mode}",
              f"neuron = {m.neuron}",
              f"v_th = {m.v_th}",
              f"a_sg = {m.a_sg}",
              f"a_init = {m.a_init}",
              "input = " + "x".join(str(s) for s in m.input_shape),
              f"classes = {m.class_count}",
              f"pool = {m.pool}",
              f"voting_group = {m.voting_group}",
              f"dtype = {m.dtype}"]
    lines += ["", "[mt]",
              f"deltas = {_fmt(m.mt.deltas)}",
              f"scope = {m.mt.scope}",
              f"apply_to_encoder = {_fmt(m.mt.apply_to_encoder)}"]
    decay_epochs = tuple(e for e, _ in t.schedule)
    decay_factor = t.schedule[0][1] if t.schedule else 0.1
    lines += ["", "[train]",
              f"epochs = {t.epochs}",
              f"batch_size = {t.batch_size}",
              f"lr = {t.lr}",
              f"momentum = {t.momentum}",
              f"lr_decay_epochs = {_fmt(decay_epochs)}",
              f"lr_decay_factor = {decay_factor}",
              f"loss = {t.loss}",
              f"augment = {_fmt(t.augment)}"]
    lines += ["", "[data]",
              f"dataset = {d.dataset}",
              f"root = {d.root}",
              f"train_limit = {d.train_limit}",
              f"test_limit = {d.test_limit}",
              f"synth_train = {d.synth_train}",
              f"synth_test = {d.synth_test}",
              f"synth_classes = {d.synth_classes}",
              f"synth_noise = {d.synth_noise}",
              f"synth_seed = {d.synth_seed}"]
    lines += ["", "[run]", f"seed = {cfg.seed}", ""]
    return "\n".join(lines)
