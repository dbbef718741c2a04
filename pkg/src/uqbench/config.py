"""Experiment configuration files (INI syntax, read with configparser).

A config may contain ``[uqbench]``, ``[dataset]``, ``[training]``,
``[metrics]``, ``[convergence]`` and any number of ``[model.NAME]``
sections. Missing keys fall back to the packaged ``defaults.cfg``.
"""

import configparser
import os
from dataclasses import dataclass, field
from importlib import resources

from . import datasets
from .errors import ConfigError
from .kl import KernelSpec
from .mmt import DissipationSpec, MMTParams
from .uq import SurrogateConfig

SCHEMA_VERSION = 1
OUTPUT_ENV = "UQBENCH_OUT"
_SURROGATE_KEYS = {
    "kind": str,
    "hidden": lambda s: tuple(int(v) for v in s.split(",") if v.strip()),
    "dropout_rate": float,
    "n_e": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "l2_weight": float,
    "kl_weight_schedule": str,
    "seed": int,
    "functional": None,
    "gp_restarts": int,
    "gp_iterations": int,
    "gp_learning_rate": float,
}


def default_output_root():
    return os.environ.get(OUTPUT_ENV, "uqbench-out")


def defaults_text():
    return resources.files(__package__).joinpath("defaults.cfg").read_text()


@dataclass(frozen=True)
class DatasetSection:
    meta: datasets.GenerationMeta
    n: int
    n_train: int
    split_seed: int


@dataclass(frozen=True)
class ConvergenceSection:
    model: str
    grid: tuple
    reference: int


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSection
    models: dict
    bins: object = None
    output: str = None
    seed: int = 1
    threads: int = 1
    convergence: ConvergenceSection = None
    source: str = ""
    extra: dict = field(default_factory=dict)


def _parser():
    p = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    p.read_string(defaults_text(), source="defaults.cfg")
    return p


def _get(section, key, conv, name):
    try:
        if conv is None:
            return section.getboolean(key)
        return conv(section[key])
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"[{name}] {key}: {exc}") from None


def generation_meta(section, seed, created=datasets.DEFAULT_TIMESTAMP):
    g = lambda k, c=float: _get(section, k, c, "dataset")
    grid = g("grid_size", int)
    try:
        return datasets.GenerationMeta(
            seed=seed,
            z_star=g("z_star"),
            kernel=KernelSpec(g("sigma_u_sq"), g("l_u"), grid),
            mmt=MMTParams(
                lam=g("lam"),
                alpha_m=g("alpha_m"),
                beta=g("beta"),
                grid_size=grid,
                t_end=g("t_end"),
                dt=g("dt"),
                dissipation=DissipationSpec(
                    g("dissipation_cutoff"), g("dissipation_strength"), g("dissipation_exponent")
                ),
            ),
            m=g("m", int),
            created=created,
        )
    except ValueError as exc:
        raise ConfigError(f"[dataset] {exc}") from None


def surrogate_config(values, name, seed, threads=1):
    """Build a SurrogateConfig from a mapping of string values."""
    kwargs = {"seed": seed, "threads": threads}
    for key, raw in values.items():
        if key not in _SURROGATE_KEYS:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        conv = _SURROGATE_KEYS[key]
        try:
            if conv is None:
                kwargs[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            else:
                kwargs[key] = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    if "kind" not in kwargs:
        raise ConfigError(f"[{name}] needs a kind")
    try:
        return SurrogateConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def load(path, created=datasets.DEFAULT_TIMESTAMP):
    p = _parser()
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path) as fh:
            text = fh.read()
        p.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return from_parser(p, text, created)


def from_parser(p, text="", created=datasets.DEFAULT_TIMESTAMP):
    top = p["uqbench"]
    version = _get(top, "schema_version", int, "uqbench")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config schema version {version} is not supported (expected {SCHEMA_VERSION})")
    seed = _get(top, "seed", int, "uqbench")
    threads = _get(top, "threads", int, "uqbench")
    if threads < 1:
        raise ConfigError("[uqbench] threads must be at least 1")

    ds = p["dataset"]
    meta = generation_meta(ds, seed, created)
    n = _get(ds, "n", int, "dataset")
    n_train = _get(ds, "n_train", int, "dataset")
    if not 1 <= n_train < n:
        raise ConfigError(f"[dataset] n_train={n_train} must satisfy 1 <= n_train < n={n}")
    dataset = DatasetSection(meta, n, n_train, _get(ds, "split_seed", int, "dataset"))

    training = dict(p["training"])
    models = {}
    for name in p.sections():
        if not name.startswith("model."):
            continue
        label = name[len("model.") :]
        if not label:
            raise ConfigError("model sections need a name, as in [model.enn]")
        values = dict(training)
        values.update({k: v for k, v in p[name].items() if k not in p.defaults()})
        models[label] = surrogate_config(values, name, seed, threads)
    if not models:
        raise ConfigError("no [model.NAME] sections; at least one model is required")

    bins_raw = p["metrics"].get("bins", "auto").strip()
    if bins_raw == "auto":
        bins = None
    else:
        try:
            bins = int(bins_raw)
        except ValueError:
            raise ConfigError(f"[metrics] bins must be 'auto' or an integer, not {bins_raw!r}") from None

    convergence = None
    if p.has_section("convergence"):
        c = p["convergence"]
        target = c.get("model", "").strip()
        if target not in models:
            raise ConfigError(f"[convergence] model {target!r} is not among the configured models")
        try:
            grid = tuple(int(v) for v in c.get("grid", "2,3,5,10,25,50").split(","))
        except ValueError as exc:
            raise ConfigError(f"[convergence] grid: {exc}") from None
        try:
            reference = int(c.get("reference", "100"))
        except ValueError as exc:
            raise ConfigError(f"[convergence] reference: {exc}") from None
        convergence = ConvergenceSection(target, grid, reference)

    output = top.get("output") or default_output_root()
    return ExperimentConfig(dataset, models, bins, output, seed, threads, convergence, text)
