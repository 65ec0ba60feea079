"""Run configuration: INI files with ``[benchmark]``, ``[dims]``, ``[training]``,
``[seeds]``, ``[evaluation]`` and ``[paths]`` sections, plus network presets.

Only the output directory may be overridden from the environment
(``DODROM_OUTPUT_DIR``); everything else comes from the file.
"""

from __future__ import annotations

import configparser
import os
from io import StringIO
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .snapshots import BenchmarkConfig
from .training import TrainConfig

OUTPUT_ENV = "DODROM_OUTPUT_DIR"
PRESET_ORDER = ("low", "medium", "high")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Dims:
    """Reduced dimensions: autoencoder latent ``n``, DOD width ``n_prime``, POD size
    ``N`` and pre-reduction size ``n_a``."""

    n: int = 2
    n_prime: int = 2
    N: int = 8
    n_a: int = 10

    def validate(self, n_h: int | None = None) -> "Dims":
        checks = [
            (self.n >= 1, f"1 <= n (n={self.n})"),
            (self.n <= self.n_prime, f"n <= N' (n={self.n}, N'={self.n_prime})"),
            (self.n_prime < self.N, f"N' < N (N'={self.n_prime}, N={self.N})"),
            (self.N < self.n_a, f"N < N_A (N={self.N}, N_A={self.n_a})"),
        ]
        if n_h is not None:
            checks.append((self.n_a <= n_h, f"N_A <= N_h (N_A={self.n_a}, N_h={n_h})"))
        for ok, msg in checks:
            if not ok:
                raise ConfigError(f"dimension hierarchy violated: {msg}")
        return self


@dataclass(frozen=True)
class Architecture:
    """Hidden widths of every network family; one preset level."""

    name: str = "medium"
    dfnn_hidden: tuple[int, ...] = (32, 32, 32)
    decoder_hidden: tuple[int, ...] = (32, 32)
    dod_latent: int = 8
    dod_seed_hidden: tuple[int, ...] = (32, 32)
    dod_head_hidden: tuple[int, ...] = (32,)


def _widths(text: str) -> tuple[int, ...]:
    try:
        w = tuple(int(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad width list {text!r}") from None
    if any(x <= 0 for x in w):
        raise ConfigError(f"widths must be positive: {text!r}")
    return w


def load_presets(path: str | Path | None = None) -> dict[str, Architecture]:
    """Preset ladder from ``path`` or the shipped defaults, keyed by level name."""
    cp = configparser.ConfigParser()
    if path is None:
        cp.read_string(resources.files("dodrom").joinpath("data/presets.ini").read_text())
    elif not cp.read(path):
        raise ConfigError(f"cannot read presets file {path}")
    out = {}
    for name in cp.sections():
        s = cp[name]
        try:
            out[name] = Architecture(
                name=name,
                dfnn_hidden=_widths(s["dfnn_hidden"]),
                decoder_hidden=_widths(s.get("decoder_hidden", "")),
                dod_latent=s.getint("dod_latent"),
                dod_seed_hidden=_widths(s["dod_seed_hidden"]),
                dod_head_hidden=_widths(s.get("dod_head_hidden", "")),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"preset [{name}]: {exc}") from None
    return out


@dataclass(frozen=True)
class Seeds:
    data: int = 0
    init: int = 1
    shuffle: int = 2
    test: int = 3


@dataclass(frozen=True)
class RunConfig:
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    dims: Dims = field(default_factory=Dims)
    training: TrainConfig = field(default_factory=TrainConfig)
    dod_training: TrainConfig = field(default_factory=TrainConfig)
    seeds: Seeds = field(default_factory=Seeds)
    n_test: int = 20
    timing_reps: int = 20
    preset: str = "medium"
    presets_file: str | None = None
    output_dir: Path = Path("runs")

    def architecture(self, name: str | None = None) -> Architecture:
        presets = load_presets(self.presets_file)
        name = name or self.preset
        if name not in presets:
            raise ConfigError(f"unknown preset {name!r}; have {sorted(presets)}")
        return presets[name]

    def path(self, name: str) -> Path:
        return Path(self.output_dir) / name


def _section_values(cp, section: str, cls, base):
    if not cp.has_section(section):
        return base
    kw = {}
    known = {f.name: f for f in fields(cls)}
    for key, raw in cp[section].items():
        if key not in known:
            raise ConfigError(f"unknown key [{section}] {key}")
        kw[key] = _coerce(getattr(base, key), raw, f"[{section}] {key}")
    return replace(base, **kw)


def _coerce(current, raw: str, where: str):
    try:
        if isinstance(current, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(float(x) for x in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"cannot parse {where} = {raw!r}") from None
    return raw


def load_config(path: str | Path | None = None) -> RunConfig:
    """Parse a run config; a missing ``path`` gives the defaults. Keys are case-sensitive."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if path is not None and not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    bench = _section_values(cp, "benchmark", BenchmarkConfig, BenchmarkConfig())
    dims = _section_values(cp, "dims", Dims, Dims())
    seeds = _section_values(cp, "seeds", Seeds, Seeds())
    training = _training(cp, "training", TrainConfig(), seeds)
    dod_training = _training(cp, "dod_training", training, seeds)
    ev = cp["evaluation"] if cp.has_section("evaluation") else {}
    paths = cp["paths"] if cp.has_section("paths") else {}
    out = os.environ.get(OUTPUT_ENV) or paths.get("output_dir", "runs")
    if bench.nx != bench.ny:
        raise ConfigError("benchmark grid must be square (nx == ny)")
    if bench.n_s1 < 1 or bench.n_s2 < 1 or bench.n_t < 1:
        raise ConfigError("sample counts must be positive")
    try:
        cfg = RunConfig(
            benchmark=replace(bench, seed=seeds.data),
            dims=dims.validate(bench.nx * bench.ny),
            training=training, dod_training=dod_training, seeds=seeds,
            n_test=int(ev.get("n_test", 20)), timing_reps=int(ev.get("timing_reps", 20)),
            preset=paths.get("preset", "medium"), presets_file=paths.get("presets") or None,
            output_dir=Path(out),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if cfg.training.omega_h < 0 or cfg.training.omega_h > 1:
        raise ConfigError("omega_h must lie in [0, 1]")
    if not 0 < cfg.training.alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    return cfg


def _training(cp, section: str, base: TrainConfig, seeds: Seeds) -> TrainConfig:
    cfg = replace(base, init_seed=seeds.init, shuffle_seed=seeds.shuffle)
    if not cp.has_section(section):
        return cfg
    kw = {}
    known = {f.name for f in fields(TrainConfig)} - {"init_seed", "shuffle_seed"}
    for key, raw in cp[section].items():
        if key not in known:
            raise ConfigError(f"unknown key [{section}] {key}")
        kw[key] = _coerce(getattr(cfg, key), raw, f"[{section}] {key}")
    return replace(cfg, **kw)


def dump_config(cfg: RunConfig) -> str:
    """INI text that :func:`load_config` parses back to ``cfg`` (output dir aside)."""
    b, d, s = cfg.benchmark, cfg.dims, cfg.seeds
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["benchmark"] = {f.name: _fmt(getattr(b, f.name)) for f in fields(b) if f.name != "seed"}
    cp["dims"] = {f.name: str(getattr(d, f.name)) for f in fields(d)}
    skip = {"init_seed", "shuffle_seed"}
    cp["training"] = {f.name: _fmt(getattr(cfg.training, f.name)) for f in fields(TrainConfig) if f.name not in skip}
    cp["dod_training"] = {f.name: _fmt(getattr(cfg.dod_training, f.name)) for f in fields(TrainConfig)
                          if f.name not in skip}
    cp["seeds"] = {f.name: str(getattr(s, f.name)) for f in fields(s)}
    cp["evaluation"] = {"n_test": str(cfg.n_test), "timing_reps": str(cfg.timing_reps)}
    cp["paths"] = {"output_dir": str(cfg.output_dir), "preset": cfg.preset}
    if cfg.presets_file:
        cp["paths"]["presets"] = cfg.presets_file
    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return repr(v) if isinstance(v, float) else str(v)
