"""Dataset generation, splitting and persistence."""

import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, container
from .errors import (
    BlowUpBudgetExceeded,
    CorruptFile,
    DimensionMismatch,
    InsufficientRows,
)
from .kl import KernelSpec, eigendecompose, sample_lhs, to_sections
from .mmt import DissipationSpec, MMTParams, simulate_batch

log = logging.getLogger(__name__)

BLOWUP_BUDGET = 0.01
DEFAULT_TIMESTAMP = "1970-01-01T00:00:00+00:00"


def default_timestamp():
    """Creation stamp for new datasets.

    Honors ``SOURCE_DATE_EPOCH`` and otherwise returns a fixed value, so
    that a given seed always produces a byte-identical file.
    """
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None:
        return DEFAULT_TIMESTAMP
    from datetime import datetime, timezone

    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()


@dataclass(frozen=True)
class GenerationMeta:
    seed: int = 0
    z_star: float = 6.0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    mmt: MMTParams = field(default_factory=MMTParams)
    m: int = 1
    created: str = DEFAULT_TIMESTAMP
    generator_version: str = __version__

    def __post_init__(self):
        if not self.z_star > 0:
            raise ValueError("z_star must be positive")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.kernel.grid_size != self.mmt.grid_size:
            raise ValueError("kernel and solver grids differ")

    @property
    def dim(self):
        return 2 * self.m

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        mmt = dict(d.pop("mmt"))
        mmt["dissipation"] = DissipationSpec(**mmt["dissipation"])
        return cls(kernel=KernelSpec(**d.pop("kernel")), mmt=MMTParams(**mmt), **d)


@dataclass(eq=False)
class Dataset:
    inputs: np.ndarray
    outputs: np.ndarray
    meta: GenerationMeta
    functional_inputs: np.ndarray = None
    # one row per excluded sample: coefficient vector then blow-up time
    quarantine: np.ndarray = None
    final_fields: np.ndarray = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, self.meta.dim)
        self.outputs = np.asarray(self.outputs, dtype=float).reshape(-1)
        n = len(self.outputs)
        if self.inputs.shape[0] != n:
            raise DimensionMismatch("inputs and outputs disagree on the row count")
        if self.functional_inputs is not None:
            self.functional_inputs = np.asarray(self.functional_inputs, dtype=float)
            if self.functional_inputs.shape[0] != n:
                raise DimensionMismatch("functional inputs disagree on the row count")
        if self.quarantine is None:
            self.quarantine = np.zeros((0, self.meta.dim + 1))
        for name in ("inputs", "outputs", "functional_inputs"):
            arr = getattr(self, name)
            if arr is not None and np.isnan(arr).any():
                raise ValueError(f"{name} contain NaN")

    def __len__(self):
        return len(self.outputs)

    @property
    def dim(self):
        return self.meta.dim

    def features(self, functional=False):
        if functional:
            if self.functional_inputs is None:
                raise DimensionMismatch("dataset carries no functional inputs")
            return self.functional_inputs
        return self.inputs

    def subset(self, indices):
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            inputs=self.inputs[idx],
            outputs=self.outputs[idx],
            meta=self.meta,
            functional_inputs=None if self.functional_inputs is None else self.functional_inputs[idx],
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            self.meta == other.meta
            and same(self.inputs, other.inputs)
            and same(self.outputs, other.outputs)
            and same(self.functional_inputs, other.functional_inputs)
            and same(self.quarantine, other.quarantine)
            and same(self.final_fields, other.final_fields)
        )


@dataclass(frozen=True)
class Split:
    train_indices: np.ndarray
    val_indices: np.ndarray


def functional_trace(u0):
    """Real parts then imaginary parts of the initial condition."""
    return np.concatenate([u0.real, u0.imag], axis=-1)


def generate(meta, n, threads=1, export_fields=False):
    """Sample ``n`` coefficient vectors, simulate each, and collect outputs.

    Rows whose simulation blows up are moved to ``quarantine``; more than 1%
    of such rows raises ``BlowUpBudgetExceeded``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    basis = eigendecompose(meta.kernel, meta.m)
    alphas = sample_lhs(basis, n, meta.z_star, meta.seed)
    u0, final, y, blown, times = simulate_batch(
        alphas, basis, meta.mmt, threads=threads, keep_fields=export_fields
    )
    n_blown = int(blown.sum())
    if n_blown:
        log.warning("%d of %d simulations blew up", n_blown, n)
    if n_blown > BLOWUP_BUDGET * n:
        raise BlowUpBudgetExceeded(
            f"{n_blown} of {n} simulations blew up (budget {BLOWUP_BUDGET:.0%})"
        )
    keep = ~blown
    quarantine = np.column_stack([alphas[blown], times[blown]]) if n_blown else None
    return Dataset(
        inputs=alphas[keep],
        outputs=y[keep],
        meta=meta,
        functional_inputs=functional_trace(u0[keep]),
        quarantine=quarantine,
        final_fields=None if final is None else final[keep],
    )


def split(ds, n_train, seed):
    """Random train/validation split without replacement. ``ds`` may be a row count."""
    n = ds if isinstance(ds, (int, np.integer)) else len(ds)
    if not 1 <= n_train < n:
        raise InsufficientRows(f"cannot take {n_train} training rows from {n} (need 1 <= n_train < n)")
    perm = np.random.default_rng(seed).permutation(n)
    return Split(np.sort(perm[:n_train]), np.sort(perm[n_train:]))


def _sections(ds):
    sections = {"inputs": ds.inputs, "outputs": ds.outputs, "quarantine": ds.quarantine}
    if ds.functional_inputs is not None:
        sections["functional_inputs"] = ds.functional_inputs
    if ds.final_fields is not None:
        f = ds.final_fields
        sections["final_fields"] = np.stack([f.real, f.imag], axis=-1)
    basis = eigendecompose(ds.meta.kernel, ds.meta.m)
    sections.update(to_sections(basis))
    return sections


def save(ds, path):
    """Write the dataset; returns the SHA-256 of the file."""
    meta = {"generation": ds.meta.to_dict(), "n": len(ds)}
    return container.write(path, "dataset", meta, _sections(ds))


def load(path):
    kind, meta, sections = container.read(path)
    if kind != "dataset":
        raise CorruptFile(f"{path} holds a {kind!r}, not a dataset")
    gmeta = GenerationMeta.from_dict(meta["generation"])
    fields = sections.get("final_fields")
    if fields is not None:
        fields = fields[..., 0] + 1j * fields[..., 1]
    return Dataset(
        inputs=sections["inputs"].reshape(-1, gmeta.dim),
        outputs=sections["outputs"],
        meta=gmeta,
        functional_inputs=sections.get("functional_inputs"),
        quarantine=sections["quarantine"].reshape(-1, gmeta.dim + 1),
        final_fields=fields,
    )
