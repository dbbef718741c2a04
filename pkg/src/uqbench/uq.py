"""The eight surrogate variants behind one train/predict contract.

========  ==========  ==========  ==========================================
kind      epistemic   aleatoric   mechanism
========  ==========  ==========  ==========================================
gp        yes         yes         exact GP posterior
nn        no          no          one network, squared error
gnn       no          yes         one network, Gaussian head
enn       yes         no          independent members, squared error + L2
dnn       yes         no          MC dropout passes, squared error
bnn       yes         yes         weight-sampled passes, Gaussian head, ELBO
egnn      yes         yes         independent Gaussian members + L2
dgnn      yes         yes         MC dropout passes, Gaussian head
========  ==========  ==========  ==========================================
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import container, gp, metrics, nn_core
from .errors import ConfigError, CorruptFile, DegenerateEnsemble, DimensionMismatch
from .posterior import Posterior

log = logging.getLogger(__name__)

KINDS = ("gp", "nn", "gnn", "enn", "egnn", "bnn", "dnn", "dgnn")

# (epistemic, aleatoric) per variant
CAPABILITIES = {
    "gp": (True, True),
    "nn": (False, False),
    "gnn": (False, True),
    "enn": (True, False),
    "dnn": (True, False),
    "bnn": (True, True),
    "egnn": (True, True),
    "dgnn": (True, True),
}
GAUSSIAN_HEAD = {"gnn", "bnn", "egnn", "dgnn"}
MEMBER_ENSEMBLES = {"enn", "egnn"}
PASS_ENSEMBLES = {"dnn", "dgnn", "bnn"}
DEFAULT_NE = {"enn": 8, "egnn": 8, "dnn": 50, "dgnn": 50, "bnn": 100}
DEFAULT_L2 = 1e-4


def _default_ne(kind):
    return DEFAULT_NE.get(kind)


@dataclass(frozen=True)
class EnsembleConfig:
    n_e: int
    member_seeds: tuple = ()
    kind: str = "independent_nets"

    def __post_init__(self):
        if self.kind not in ("independent_nets", "dropout_passes", "bnn_passes"):
            raise ConfigError(f"unknown ensemble kind {self.kind!r}")
        if self.n_e < 2:
            raise ConfigError("an ensemble needs n_e >= 2 for its variance to exist")
        if self.member_seeds and len(self.member_seeds) != self.n_e:
            raise ConfigError("member_seeds must have n_e entries")


@dataclass(frozen=True)
class SurrogateConfig:
    """Everything needed to train one surrogate; NN fields are ignored by gp."""

    kind: str = "enn"
    hidden: tuple = (64, 64, 64, 64)
    dropout_rate: float = None
    n_e: int = None
    epochs: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-3
    l2_weight: float = None
    kl_weight_schedule: str = "uniform"
    seed: int = 0
    functional: bool = False
    gp_restarts: int = 8
    gp_iterations: int = 2000
    gp_learning_rate: float = 1e-2
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown surrogate kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.dropout_rate is None:
            object.__setattr__(self, "dropout_rate", 0.5 if self.kind in ("dnn", "dgnn") else 0.0)
        if self.n_e is None:
            object.__setattr__(self, "n_e", _default_ne(self.kind))
        if self.l2_weight is None:
            object.__setattr__(self, "l2_weight", DEFAULT_L2 if self.kind in MEMBER_ENSEMBLES else 0.0)
        if self.kind in MEMBER_ENSEMBLES or self.kind in PASS_ENSEMBLES:
            if self.n_e is None or self.n_e < 2:
                raise ConfigError(f"{self.kind} needs n_e >= 2, got {self.n_e}")
        if self.dropout_rate and self.kind not in ("dnn", "dgnn"):
            raise ConfigError(f"dropout is only used by dnn and dgnn, not {self.kind}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout rate must lie in [0, 1)")
        if self.functional and self.kind == "gp":
            raise ConfigError("the GP surrogate takes ROM coefficients only")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    @property
    def capabilities(self):
        return CAPABILITIES[self.kind]

    def network_spec(self, input_dim):
        return nn_core.NetworkSpec(
            input_dim=input_dim,
            hidden=self.hidden,
            dropout_rate=self.dropout_rate,
            head="gaussian" if self.kind in GAUSSIAN_HEAD else "deterministic",
            variational=self.kind == "bnn",
        )

    def train_config(self, seed):
        return nn_core.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            l2_weight=self.l2_weight,
            seed=seed,
            kl_weight_schedule=self.kl_weight_schedule,
        )

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden"] = tuple(d.get("hidden", ()))
        return cls(**d)


def member_seeds(seed, count):
    """Independent integer seeds derived from one base seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


@dataclass(eq=False)
class Scaler:
    """Per-feature affine standardization; identity when ``mean``/``std`` are None."""

    mean: np.ndarray = None
    std: np.ndarray = None

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=float)
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std > 0, std, 1.0))

    def apply(self, x):
        return x if self.mean is None else (x - self.mean) / self.std


@dataclass(eq=False)
class SurrogateModel:
    config: SurrogateConfig
    input_dim: int
    x_scaler: Scaler = field(default_factory=Scaler)
    y_mean: float = 0.0
    y_std: float = 1.0
    spec: nn_core.NetworkSpec = None
    members: list = field(default_factory=list)
    gp_hp: gp.GPHyperparams = None
    gp_state: gp.GPPosteriorState = None
    # provenance such as the training split; stored verbatim in snapshots
    info: dict = field(default_factory=dict)

    @property
    def kind(self):
        return self.config.kind

    @property
    def capabilities(self):
        return self.config.capabilities

    @property
    def functional(self):
        return self.config.functional

    def predict(self, query, n_e=None, seed=0):
        return predict(self, query, n_e=n_e, seed=seed)


def ensemble_predict(outputs, sigma_n=None):
    """Combine member predictions into one Posterior.

    ``outputs`` has shape ``(n_e, q)``. With ``sigma_n`` (one value per
    member, or ``(n_e, q)``), aleatoric variance is the member average of
    sigma_n^2. Epistemic variance uses the unbiased ``n_e - 1`` divisor.
    """
    outputs = np.asarray(outputs, dtype=float)
    if outputs.ndim == 1:
        outputs = outputs[:, None]
    n_e = outputs.shape[0]
    if n_e < 2:
        raise DegenerateEnsemble(f"ensemble of {n_e} member(s) has no variance")
    # shifting by the first member makes identical members give exactly zero spread
    dev = outputs - outputs[0]
    shift = dev.mean(axis=0)
    mu = outputs[0] + shift
    var = ((dev - shift) ** 2).sum(axis=0) / (n_e - 1)
    if sigma_n is None:
        noise = np.zeros_like(mu)
    else:
        s = np.asarray(sigma_n, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        noise = np.sqrt(np.broadcast_to(s**2, outputs.shape).mean(axis=0))
    return Posterior(mu, np.sqrt(var), noise)


def _features(dataset_or_x, functional):
    if hasattr(dataset_or_x, "features"):
        return dataset_or_x.features(functional)
    return np.atleast_2d(np.asarray(dataset_or_x, dtype=float))


def train_surrogate(kind, dataset, config=None, **overrides):
    """Train one surrogate variant on ``dataset`` (a Dataset or an ``(x, y)`` pair)."""
    config = config or SurrogateConfig(kind=kind)
    if config.kind != kind:
        config = replace(config, kind=kind)
    if overrides:
        config = replace(config, **overrides)
    if isinstance(dataset, tuple):
        x, y = dataset
        x = np.atleast_2d(np.asarray(x, dtype=float))
    else:
        x, y = dataset.features(config.functional), dataset.outputs
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(x) != len(y):
        raise DimensionMismatch("inputs and outputs disagree on the row count")

    model = SurrogateModel(config=config, input_dim=x.shape[1])
    if kind == "gp":
        opt = gp.OptimizerConfig(
            restarts=config.gp_restarts,
            iterations=config.gp_iterations,
            learning_rate=config.gp_learning_rate,
            seed=config.seed,
        )
        model.gp_hp, model.gp_state = gp.fit(x, y, opt)
        return model

    if config.functional:
        model.x_scaler = Scaler.fit(x)
    xs = model.x_scaler.apply(x)
    model.y_mean = float(y.mean())
    std = float(y.std())
    model.y_std = std if std > 0 else 1.0
    ys = (y - model.y_mean) / model.y_std
    model.spec = config.network_spec(x.shape[1])

    count = config.n_e if kind in MEMBER_ENSEMBLES else 1
    seeds = member_seeds(config.seed, count)

    def one(seed):
        return nn_core.train(model.spec, (xs, ys), config.train_config(seed))

    if config.threads > 1 and count > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            model.members = list(pool.map(one, seeds))
    else:
        model.members = [one(s) for s in seeds]
    return model


def _check_query(model, query):
    if hasattr(query, "features"):
        query = query.features(model.functional)
    q = np.atleast_2d(np.asarray(query, dtype=float))
    if q.shape[1] != model.input_dim:
        layout = "functional" if model.functional else "ROM"
        raise DimensionMismatch(
            f"query has {q.shape[1]} features; this {layout} model expects {model.input_dim}"
        )
    return model.x_scaler.apply(q)


def member_outputs(model, query, n_e=None, seed=0):
    """Per-member (or per-pass) means and sigma_n in output units.

    Returns ``(mus, sigmas)`` with ``mus`` of shape ``(n_e, q)`` and
    ``sigmas`` of shape ``(n_e,)`` or None. Pass ``j`` depends only on
    ``seed`` and ``j``, so a smaller ``n_e`` yields a prefix of a larger one.
    """
    if model.kind == "gp":
        raise ValueError("the GP has no members")
    x = _check_query(model, query)
    spec = model.spec
    if model.kind in MEMBER_ENSEMBLES:
        count = len(model.members) if n_e is None else n_e
        if count > len(model.members):
            raise ConfigError(f"model has {len(model.members)} members, {count} requested")
        runs = [(m, "infer_deterministic", None) for m in model.members[:count]]
    elif model.kind in PASS_ENSEMBLES:
        count = model.config.n_e if n_e is None else n_e
        rngs = [np.random.default_rng(s) for s in member_seeds(seed, count)] if count else []
        runs = [(model.members[0], "infer_stochastic", r) for r in rngs]
    else:
        runs = [(model.members[0], "infer_deterministic", None)]
    mus = np.empty((len(runs), len(x)))
    sigmas = np.empty(len(runs)) if spec.head == "gaussian" else None
    for j, (state, mode, rng) in enumerate(runs):
        out = nn_core.forward(state, spec, x, mode=mode, rng=rng)
        if sigmas is not None:
            out, sigmas[j] = out
        mus[j] = out
    mus = mus * model.y_std + model.y_mean
    if sigmas is not None:
        sigmas = sigmas * model.y_std
    return mus, sigmas


def predict(model, query, n_e=None, seed=0):
    """Posterior at each query row; deterministic for a fixed ``seed``."""
    if model.kind == "gp":
        return gp.predict(model.gp_state, model.gp_hp, _check_query(model, query))
    mus, sigmas = member_outputs(model, query, n_e=n_e, seed=seed)
    if model.kind in ("nn", "gnn"):
        noise = 0.0 if sigmas is None else sigmas[0]
        return Posterior(mus[0], 0.0, noise)
    return ensemble_predict(mus, sigmas)


def convergence_study(model, query, n_e_grid, reference=100, seed=0, bins=None):
    """Both convergence measures of sigma_eps against a reference ensemble size.

    Returns a dict with ``n_e``, ``log_pdf_difference`` and
    ``mean_squared_difference`` arrays. Ensembles for smaller ``n_e`` are
    prefixes of the reference ensemble.
    """
    grid = sorted(int(n) for n in n_e_grid)
    if not grid:
        raise ConfigError("empty n_e grid")
    if reference < grid[-1]:
        raise ConfigError(f"reference n_e {reference} is below the largest grid value {grid[-1]}")
    if grid[0] < 2:
        raise DegenerateEnsemble("every n_e in the grid must be at least 2")
    mus, sigmas = member_outputs(model, query, n_e=reference, seed=seed)
    ref = ensemble_predict(mus, sigmas).sigma_eps
    logdiff, msd = [], []
    for n in grid:
        s = ensemble_predict(mus[:n], None if sigmas is None else sigmas[:n]).sigma_eps
        logdiff.append(metrics.log_pdf_difference(s, ref, bins=bins))
        msd.append(float(np.mean((s - ref) ** 2)))
    return {
        "n_e": np.array(grid),
        "log_pdf_difference": np.array(logdiff),
        "mean_squared_difference": np.array(msd),
    }


def save_model(model, path):
    """Write a surrogate snapshot; returns the SHA-256 of the file."""
    meta = {
        "config": model.config.to_dict(),
        "input_dim": model.input_dim,
        "y_mean": model.y_mean,
        "y_std": model.y_std,
        "members": len(model.members),
        "info": model.info,
    }
    sections = {}
    if model.kind == "gp":
        sections.update(gp.to_sections(model.gp_hp, model.gp_state))
    else:
        for j, state in enumerate(model.members):
            sections.update(nn_core.to_sections(state, f"m{j}_"))
    if model.x_scaler.mean is not None:
        sections["x_mean"] = model.x_scaler.mean
        sections["x_std"] = model.x_scaler.std
    return container.write(path, "surrogate", meta, sections)


def load_model(path):
    kind, meta, sections = container.read(path)
    if kind != "surrogate":
        raise CorruptFile(f"{path} holds a {kind!r}, not a surrogate")
    config = SurrogateConfig.from_dict(meta["config"])
    model = SurrogateModel(
        config=config,
        input_dim=meta["input_dim"],
        y_mean=meta["y_mean"],
        y_std=meta["y_std"],
        info=meta.get("info", {}),
    )
    if "x_mean" in sections:
        model.x_scaler = Scaler(sections["x_mean"], sections["x_std"])
    if config.kind == "gp":
        model.gp_hp, model.gp_state = gp.from_sections(sections)
    else:
        model.spec = config.network_spec(model.input_dim)
        model.members = [nn_core.from_sections(sections, f"m{j}_", model.spec) for j in range(meta["members"])]
    return model
