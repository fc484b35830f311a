"""``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored; unknown keys, malformed values
and constraint violations raise :class:`ConfigError` naming the line.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import ConfigError
from .federation import FederationConfig
from .metrics import METHODS

DATASETS = ("blobs", "glyphs")
EVAL_MODES = ("real_plus_syn", "syn_only")
DISTANCES = ("l2", "probe_feature")


@dataclass
class ExperimentConfig:
    method: str = "gefl"
    family: str = "cvae"
    # dataset
    dataset: str = "blobs"
    num_classes: int = 4
    dim: int = 8
    side: int = 8
    n_per_class: int = 1250
    noise: float = 1.5
    shift_max: int = 1
    test_ratio: float = 0.2
    fraction: float = 0.1
    # federation
    clients: int = 10
    archs: int = 10
    t_ka: int = 100
    t_tn: int = 50
    t_fe: int = 20
    t_g: int = 5
    t_s: int = 1
    t_r: int = 5
    t_w: int = 5
    alpha: float = 0.1
    beta: float | None = None
    batch_size: int = 64
    guidance: float = 0.0
    gan_mode: str = "freeze"
    homogeneity_level: int = 0
    participation: float = 1.0
    workers: int = 1
    strict: bool = False
    latent_dim: int = 16
    gen_hidden: tuple[int, ...] = (64,)
    ddpm_steps: int = 100
    uncond_drop_prob: float = 0.1
    trunk: tuple[int, ...] = (32, 16)
    # evaluation and output
    eval_mode: str = "real_plus_syn"
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs"
    save_checkpoints: bool = True
    mnd: bool = False
    mnd_probe_size: int = 256
    mnd_set_size: int = 256
    mnd_distance: str = "l2"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"eval_mode must be one of {EVAL_MODES}")
        if self.mnd_distance not in DISTANCES:
            raise ConfigError(f"mnd_distance must be one of {DISTANCES}")
        if not 0 < self.fraction <= 1 or not 0 < self.test_ratio < 1:
            raise ConfigError("fraction must lie in (0, 1] and test_ratio in (0, 1)")
        if self.num_classes < 2 or self.n_per_class < 1 or self.noise < 0:
            raise ConfigError("dataset needs num_classes >= 2, n_per_class >= 1, noise >= 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if min(self.mnd_probe_size, self.mnd_set_size) < 1:
            raise ConfigError("MND sizes must be positive")
        if any(w < 1 for w in self.gen_hidden + self.trunk):
            raise ConfigError("layer widths must be positive")
        self.federation(self.seeds[0])

    def federation(self, seed: int) -> FederationConfig:
        names = {f.name for f in fields(FederationConfig)}
        kw = {k: v for k, v in dataclasses.asdict(self).items() if k in names}
        if self.eval_mode == "syn_only":
            kw["t_r"] = 0
        return FederationConfig(**kw, seed=seed)


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _parse_opt_float(text: str) -> float | None:
    return None if text.lower() in ("none", "default", "") else float(text)


_PARSERS = {"int": int, "float": float, "str": str, "bool": _parse_bool,
            "tuple[int, ...]": _parse_ints, "float | None": _parse_opt_float}


def _field_parser(f: dataclasses.Field):
    return _PARSERS[f.type if isinstance(f.type, str) else f.type.__name__]


def parse_pairs(pairs: list[tuple[int, str, str]], base: ExperimentConfig | None = None) -> ExperimentConfig:
    known = {f.name: f for f in fields(ExperimentConfig)}
    values = dataclasses.asdict(base) if base is not None else {}
    seen_line = {}
    for n, key, raw in pairs:
        if key not in known:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        try:
            values[key] = _field_parser(known[key])(raw)
        except ValueError as exc:
            raise ConfigError(f"line {n}: bad value for {key}: {exc}") from None
        seen_line[key] = n
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        lines = [n for k, n in seen_line.items() if k in str(exc)]
        where = f"line {lines[0]}: " if lines else ""
        raise ConfigError(f"{where}{exc}") from None


def parse_config(text: str) -> ExperimentConfig:
    pairs = []
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected 'key = value'")
        pairs.append((n, key.strip(), value.strip()))
    return parse_pairs(pairs)


def parse_spec(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Semicolon-separated ``key=value`` items, as passed on the command line."""
    pairs = []
    for n, item in enumerate(filter(None, (t.strip() for t in text.split(";"))), start=1):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"item {n}: expected 'key=value'")
        pairs.append((n, key.strip(), value.strip()))
    return parse_pairs(pairs, base)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def config_dict(cfg: ExperimentConfig) -> dict:
    return {f.name: _format(getattr(cfg, f.name)) for f in fields(cfg)}
