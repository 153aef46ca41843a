"""Run configurations: parsing, validation and dispatch to a training method."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .baselines import (
    DropEdgeConfig,
    UgsLiteConfig,
    dropedge_plus_snohv2,
    dropedge_run,
    random_prune_run,
    rate_for_mean_sparsity,
    ugs_lite_run,
)
from .datasets import load_dataset, with_random_split
from .engine import ModelConfig
from .snowflake import SnoHv1Config, SnoHv2Config, snohv1_run, snohv2_run
from .training import TrainConfig, train_baseline

METHODS = ("none", "snohv1", "snohv2", "random", "ugs_lite", "dropedge", "dropedge+snohv2")

_V2_KEYS = {"rho", "k", "warmup", "threshold_mode", "relative_p"}
METHOD_PARAMS = {
    "none": set(),
    "snohv1": {"p", "k", "scheme", "rounds", "reinit_epochs"},
    "snohv2": _V2_KEYS,
    "random": {"rate", "match_sparsity"},
    "ugs_lite": {"ipr", "rounds", "epochs_per_round", "rewind", "l1"},
    "dropedge": {"q", "per_layer"},
    "dropedge+snohv2": _V2_KEYS | {"q"},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str | None = None
    variant: str = "GCN"
    depth: int = 2
    hidden: int = 64
    dropout: float = 0.0
    batch_norm: bool = False
    method: str = "none"
    epochs: int = 1000
    lr: float = 0.01
    seed: int = 0
    deterministic: bool = False
    renormalize: bool = False
    distance_every: int = 50
    split: str = "auto"  # auto: splits.json if present, else random 60/20/20
    split_seed: int | None = None  # defaults to seed
    out: str | None = None
    # method parameters; None means "not set"
    p: float | None = None
    k: int | None = None
    scheme: str | None = None
    rounds: int | None = None
    reinit_epochs: int | None = None
    rho: float | None = None
    warmup: int | None = None
    threshold_mode: str | None = None
    relative_p: float | None = None
    rate: float | None = None
    match_sparsity: float | None = None
    ipr: float | None = None
    epochs_per_round: int | None = None
    rewind: str | None = None
    l1: float | None = None
    q: float | None = None
    per_layer: bool | None = None

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        all_params = set().union(*METHOD_PARAMS.values())
        stray = sorted(k for k in all_params
                       if getattr(self, k) is not None and k not in METHOD_PARAMS[self.method])
        if stray:
            raise ConfigError(f"parameter(s) {', '.join(stray)} do not apply to "
                              f"method {self.method!r}")
        if self.method == "random" and (self.rate is None) == (self.match_sparsity is None):
            raise ConfigError("method 'random' needs exactly one of rate or match_sparsity")
        if self.split not in ("auto", "file", "random"):
            raise ConfigError("split must be auto, file or random")
        for name in ("depth", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        try:
            self.model_config(1, 1)
            self.train_config()
            self.method_config()
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from None
        return self

    def model_config(self, input_dim, num_classes):
        return ModelConfig(self.variant, self.depth, input_dim, num_classes, self.hidden,
                           seed=self.seed, dropout=self.dropout, batch_norm=self.batch_norm)

    def train_config(self):
        return TrainConfig(self.epochs, self.lr, self.seed, self.deterministic, self.renormalize,
                           self.distance_every)

    def _given(self, **mapping):
        return {dst: getattr(self, src) for dst, src in mapping.items()
                if getattr(self, src) is not None}

    def method_config(self):
        m = self.method
        if m == "snohv1":
            return SnoHv1Config(**self._given(prune_rate="p", window="k", scheme="scheme",
                                              iterative_rounds="rounds",
                                              reinit_epochs="reinit_epochs"))
        if m in ("snohv2", "dropedge+snohv2"):
            return SnoHv2Config(**self._given(threshold_mode="threshold_mode", rho="rho",
                                              relative_p="relative_p", check_every="k",
                                              warmup="warmup"))
        if m == "ugs_lite":
            given = self._given(prune_rate="ipr", rounds="rounds", rewind="rewind", l1="l1")
            if self.epochs_per_round is not None:
                given["epochs_per_round"] = self.epochs_per_round
            else:
                # spread the epoch budget over the rounds
                given["epochs_per_round"] = max(1, self.epochs // (self.rounds or 5))
            return UgsLiteConfig(**given)
        if m == "dropedge":
            return DropEdgeConfig(**self._given(drop_rate="q", per_layer="per_layer"),
                                  seed=self.seed)
        if m == "random":
            if self.rate is not None and not 0 <= self.rate <= 100:
                raise ValueError("rate must be in [0, 100]")
            if self.match_sparsity is not None and not 0 <= self.match_sparsity <= 1:
                raise ValueError("match_sparsity must be in [0, 1]")
        return None

    def random_rate(self):
        if self.rate is not None:
            return self.rate
        return rate_for_mean_sparsity(self.match_sparsity, self.depth)

    def as_dict(self):
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(key, text):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    if isinstance(text, str):
        text = text.strip()
        optional = "None" in kind
        if optional and text.lower() in ("none", "null", ""):
            return None
        if not text:
            raise ConfigError(f"{key} needs a value")
    try:
        if kind.startswith("bool"):
            if isinstance(text, bool):
                return text
            low = str(text).lower()
            if low not in _TRUE | _FALSE:
                raise ValueError
            return low in _TRUE
        if kind.startswith("int"):
            value = float(text)
            if not value.is_integer():
                raise ValueError
            return int(value)
        if kind.startswith("float"):
            return float(text)
        return str(text)
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None


def parse_assignments(lines, source="--set"):
    """``key=value`` strings to a typed dict. Blank lines and '#' comments are skipped."""
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        out[key] = _convert(key, value)
    return out


def read_config_file(path):
    """Read a ``key=value`` file, or the ``config`` object of an echoed JSON file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err.strerror}") from None
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON: {err.msg}") from None
        data = data.get("config", data)
        return {k: _convert(k, v) if v is not None else None for k, v in data.items()}
    return parse_assignments(text.splitlines(), str(path))


def build_config(file_values=None, overrides=None):
    values = dict(file_values or {})
    values.update(overrides or {})
    for key in values:
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
    return RunConfig(**values).validate()


def load_bundle(cfg: RunConfig):
    if not cfg.dataset:
        raise ConfigError("no dataset given (set dataset=PATH)")
    bundle = load_dataset(cfg.dataset)
    has_file_split = len(bundle.graph.train) > 0
    if cfg.split == "file" and not has_file_split:
        raise ConfigError("split=file but the dataset has no splits.json")
    if cfg.split == "random" or (cfg.split == "auto" and not has_file_split):
        seed = cfg.seed if cfg.split_seed is None else cfg.split_seed
        bundle = with_random_split(bundle, seed=seed)
    return bundle


def execute(cfg: RunConfig, bundle=None):
    """Run one configuration. Returns ``(report, masks)``."""
    bundle = bundle if bundle is not None else load_bundle(cfg)
    graph = bundle.graph
    model = cfg.model_config(graph.num_features, bundle.num_classes)
    train = cfg.train_config()
    method_cfg = cfg.method_config()
    m = cfg.method
    if m == "none":
        _, masks, report = train_baseline(graph, model, train)
    elif m == "snohv1":
        _, ps, report = snohv1_run(graph, method_cfg, model, train)
        masks = ps.masks
    elif m == "snohv2":
        _, ps, report = snohv2_run(graph, method_cfg, model, train)
        masks = ps.masks
    elif m == "random":
        _, masks, report = random_prune_run(graph, cfg.random_rate(), model, train,
                                            seed=cfg.seed)
    elif m == "ugs_lite":
        _, masks, report = ugs_lite_run(graph, method_cfg, model, train)
    elif m == "dropedge":
        _, masks, report = dropedge_run(graph, method_cfg, model, train)
    else:
        q = 0.3 if cfg.q is None else cfg.q
        _, ps, report = dropedge_plus_snohv2(graph, q, method_cfg, model, train, seed=cfg.seed)
        masks = ps.masks
    return report, masks
