"""Flat ``key = value`` experiment configuration."""

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..mlp import MlpSpec
from ..sgd import SgdConfig

DATA_DIR_ENV = "MLPDYN_DATA_DIR"


@dataclass(frozen=True)
class ExperimentConfig:
    """Every key accepted in a config file or via ``--set``.

    ``depth`` counts linear layers; all hidden layers have ``width`` units.
    ``dataset`` is ``synth``, ``mnist`` or ``cifar10``. ``layers`` is ``all``
    (every hidden layer) or a comma list of 1-based linear-layer indices.
    ``window_start``/``window_end`` override the estimation window used by
    the analysis (``-1`` means: use the detected first phase).
    """

    dataset: str = "synth"
    data_dir: str = ""
    train_limit: int = 10000
    synth_classes: int = 8
    synth_dim: int = 64
    synth_per_class: int = 1250
    synth_eval_per_class: int = 250
    synth_spread: float = 0.25
    synth_seed: int = 0
    depth: int = 7
    width: int = 128
    activation: str = "relu"
    negative_slope: float = 0.1
    normalization: str = "none"
    init_seed: int = 0
    init_gain: float = 1.4142135623730951
    learning_rate: float = 0.01
    batch_size: int = 100
    epochs: int = 150
    shuffle_seed: int = 0
    seed: int = 0
    tracked_per_class: int = 32
    layers: str = "all"
    cadence: int = 1
    directions: int = 5
    pairs: int = 500
    table_categories: int = 2
    window_start: int = -1
    window_end: int = -1
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.dataset not in ("synth", "mnist", "cifar10"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.cadence < 1:
            raise ValueError("cadence must be at least 1")
        if self.depth < 2:
            raise ValueError("depth must be at least 2")
        if self.tracked_per_class < 2:
            raise ValueError("tracked_per_class must be at least 2")
        if self.directions < 1:
            raise ValueError("directions must be at least 1")
        self.sgd_config()

    def input_dim(self):
        return {"synth": self.synth_dim, "mnist": 784, "cifar10": 3072}[self.dataset]

    def num_classes(self):
        return self.synth_classes if self.dataset == "synth" else 10

    def mlp_spec(self):
        widths = (self.input_dim(),) + (self.width,) * (self.depth - 1) + (self.num_classes(),)
        return MlpSpec(widths, self.activation, self.negative_slope, self.normalization,
                       self.init_seed, self.init_gain)

    def sgd_config(self):
        return SgdConfig(self.learning_rate, self.batch_size, self.epochs, self.shuffle_seed)

    def instrumented_layers(self):
        hidden = list(range(1, self.depth))
        if self.layers.strip() == "all":
            return hidden
        chosen = sorted({int(tok) for tok in self.layers.split(",") if tok.strip()})
        bad = [l for l in chosen if l not in hidden]
        if bad:
            raise ValueError(f"layers {bad} are not hidden layers (1..{self.depth - 1})")
        return chosen

    def resolved_data_dir(self):
        return self.data_dir or os.environ.get(DATA_DIR_ENV, "data")

    def to_text(self):
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(key, value):
    if key not in _TYPES:
        raise KeyError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    kind = kind if isinstance(kind, type) else {"int": int, "float": float, "str": str}[kind]
    try:
        return kind(value)
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: cannot read {value!r} as {kind.__name__}") from exc


def parse_pairs(lines, source="<text>"):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for num, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{num}: expected key = value, got {raw.rstrip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _convert(key, value)
    return out


def load_config(path=None, overrides=()):
    """Config from an optional file, then ``key=value`` overrides on top."""
    values = {}
    if path is not None:
        values.update(parse_pairs(Path(path).read_text().splitlines(), str(path)))
    values.update(parse_pairs(overrides, "--set"))
    return ExperimentConfig(**values)


def read_run_config(run_dir):
    return load_config(Path(run_dir) / "config.txt")


def with_overrides(config, **changes):
    return replace(config, **changes)
