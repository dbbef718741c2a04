"""Calibration and uncertainty summaries for trained surrogates.

Functions taking a ``model`` also accept a precomputed ``Posterior``; any
object with a ``predict(x)`` method returning a ``Posterior`` works.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import NoEpistemicUQ, ZeroUncertainty
from .posterior import Posterior

MIN_BINS = 20
MAX_BINS = 200


def _posterior(model, x):
    if isinstance(model, Posterior):
        return model
    return model.predict(x)


def _unpack(validation):
    """``(x, y)`` from a pair, or ``(dataset, outputs)`` so models pick their own features."""
    if validation is None:
        return None, None
    if isinstance(validation, tuple):
        return validation
    return validation, validation.outputs


def fd_edges(values, lo=None, hi=None):
    """Freedman-Diaconis bin edges over ``[lo, hi]`` with the bin count clipped to [20, 200]."""
    values = np.asarray(values, dtype=float).reshape(-1)
    lo = float(values.min()) if lo is None else lo
    hi = float(values.max()) if hi is None else hi
    if not hi > lo:
        half = 0.5 * max(abs(lo), 1.0) * 1e-6
        lo, hi = lo - half, hi + half
    q75, q25 = np.percentile(values, [75, 25])
    width = 2.0 * (q75 - q25) * len(values) ** (-1.0 / 3.0)
    bins = MAX_BINS if width <= 0 else int(np.ceil((hi - lo) / width))
    bins = int(np.clip(bins, MIN_BINS, MAX_BINS))
    return np.linspace(lo, hi, bins + 1)


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @classmethod
    def build(cls, values, edges=None):
        values = np.asarray(values, dtype=float).reshape(-1)
        edges = fd_edges(values) if edges is None else np.asarray(edges, dtype=float)
        # np.histogram closes the last bin on the right, so every in-range value is counted
        counts, _ = np.histogram(values, bins=edges)
        return cls(edges, counts)

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def density(self):
        total = self.counts.sum()
        if total == 0:
            return np.zeros(len(self.counts))
        return self.counts / (total * self.widths)

    def rows(self):
        return [
            {"bin_left": lo, "bin_right": hi, "count": int(c), "density": d}
            for lo, hi, c, d in zip(self.edges[:-1], self.edges[1:], self.counts, self.density)
        ]


def standard_normal_pdf(x):
    return np.exp(-0.5 * np.asarray(x) ** 2) / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class NRReport:
    z_values: np.ndarray
    mean: float
    variance: float
    histogram: Histogram
    reference: np.ndarray


@dataclass(frozen=True, eq=False)
class UncertaintyReport:
    sigma_eps_values: np.ndarray
    histogram: Histogram
    sigma_n: float = None


def z_scores(y, mu, sigma):
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    bad = np.flatnonzero(~(sigma > 0))
    if len(bad):
        raise ZeroUncertainty(
            f"predicted total uncertainty is zero at {len(bad)} of {len(sigma)} queries "
            f"(first at row {bad[0]}); this model cannot be scored by normalized residuals"
        )
    return (y - mu) / sigma


def normalized_residuals(model, validation, edges=None):
    """z = (y - mu) / sqrt(sigma_eps^2 + sigma_n^2) over the validation rows."""
    x, y = _unpack(validation)
    post = _posterior(model, x)
    z = z_scores(y, post.mu, post.total_std)
    hist = Histogram.build(z, edges)
    return NRReport(z, float(z.mean()), float(z.var()), hist, standard_normal_pdf(hist.centers))


def _require_epistemic(model):
    caps = getattr(model, "capabilities", None)
    if caps is not None and not caps[0]:
        raise NoEpistemicUQ(f"{model.kind} surrogates provide no epistemic uncertainty")


def uncertainty_distribution(model, validation, edges=None):
    _require_epistemic(model)
    x, _ = _unpack(validation)
    post = _posterior(model, x)
    caps = getattr(model, "capabilities", (True, bool(np.any(post.sigma_n > 0))))
    sigma_n = float(post.sigma_n.mean()) if caps[1] else None
    return UncertaintyReport(post.sigma_eps, Histogram.build(post.sigma_eps, edges), sigma_n)


def acquisition(model, query, weight_fn=None):
    """w(alpha) * sigma_eps(alpha)^2 at each query row; w defaults to 1."""
    _require_epistemic(model)
    query = None if query is None else np.atleast_2d(np.asarray(query, dtype=float))
    post = _posterior(model, query)
    weight = 1.0 if weight_fn is None else np.asarray(weight_fn(query), dtype=float)
    return weight * post.sigma_eps**2


def log_pdf_difference(sample, reference, bins=None):
    """Integrated |log p - log p_ref| over shared Freedman-Diaconis bins.

    Densities are floored at 1/(10 n w) so empty bins stay finite.
    """
    sample = np.asarray(sample, dtype=float).reshape(-1)
    reference = np.asarray(reference, dtype=float).reshape(-1)
    if bins is None:
        edges = fd_edges(np.concatenate([sample, reference]))
    elif np.ndim(bins) == 0:
        both = np.concatenate([sample, reference])
        lo, hi = both.min(), both.max()
        if not hi > lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    total = 0.0
    w = np.diff(edges)
    p = []
    for s in (sample, reference):
        dens = Histogram.build(s, edges).density
        p.append(np.log(np.maximum(dens, 1.0 / (10.0 * len(s) * w))))
    total = float(np.sum(np.abs(p[0] - p[1]) * w))
    return total


@dataclass(frozen=True, eq=False)
class ReportEntry:
    name: str
    posterior: Posterior
    nr: NRReport
    uncertainty: UncertaintyReport


def report(models, validation, names=None, seed=0):
    """Per-model NR and sigma_eps reports on shared bins.

    ``models`` maps names to surrogates (or is a list, named by kind).
    Models without epistemic UQ get no uncertainty report; models whose total
    uncertainty vanishes get no NR report.
    """
    if not isinstance(models, dict):
        models = {(names[i] if names else m.kind): m for i, m in enumerate(models)}
    x, y = _unpack(validation)
    posts = {}
    for name, m in models.items():
        posts[name] = m if isinstance(m, Posterior) else m.predict(x, seed=seed)

    zs, eps = {}, {}
    for name, post in posts.items():
        total = post.total_std
        if np.all(total > 0):
            zs[name] = (np.asarray(y) - post.mu) / total
        caps = getattr(models[name], "capabilities", (True, True))
        if caps[0]:
            eps[name] = post.sigma_eps
    z_edges = fd_edges(np.concatenate(list(zs.values()))) if zs else None
    e_edges = fd_edges(np.concatenate(list(eps.values()))) if eps else None

    entries = []
    for name, post in posts.items():
        nr = normalized_residuals(post, (x, y), z_edges) if name in zs else None
        unc = None
        if name in eps:
            caps = getattr(models[name], "capabilities", (True, True))
            unc = UncertaintyReport(
                post.sigma_eps,
                Histogram.build(post.sigma_eps, e_edges),
                float(post.sigma_n.mean()) if caps[1] else None,
            )
        entries.append(ReportEntry(name, post, nr, unc))
    return entries


def summary(entries):
    out = {}
    for e in entries:
        item = {"n": len(e.posterior)}
        if e.nr is not None:
            item["nr_mean"] = e.nr.mean
            item["nr_variance"] = e.nr.variance
        if e.uncertainty is not None:
            item["sigma_eps_mean"] = float(e.uncertainty.sigma_eps_values.mean())
            item["sigma_n"] = e.uncertainty.sigma_n
        out[e.name] = item
    return out


def write_histogram_csv(path, hist, reference=None):
    with open(path, "w", newline="") as fh:
        fields = ["bin_left", "bin_right", "count", "density"]
        if reference is not None:
            fields.append("reference_density")
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for i, row in enumerate(hist.rows()):
            row = {k: (repr(float(v)) if k != "count" else v) for k, v in row.items()}
            if reference is not None:
                row["reference_density"] = repr(float(reference[i]))
            w.writerow(row)


def write_columns_csv(path, columns):
    """Write equal-length named columns; floats keep full precision."""
    names = list(columns)
    data = [np.asarray(columns[n]).reshape(-1) for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*data):
            w.writerow([repr(v.item()) if isinstance(v, np.floating) else v.item() for v in row])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
