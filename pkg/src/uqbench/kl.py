"""Karhunen-Loeve basis of the complex periodic autocorrelation kernel.

The kernel ``k(x, x')`` is complex and even in the lag, so the covariance of
the real vector ``(Re u, Im u)`` on the grid is the block circulant matrix::

    C = 1/2 * [[Re K, Im K],
               [Im K, Re K]]

Its eigenvectors are real Fourier modes ``v`` paired as ``(v, v)`` and
``(v, -v)``, i.e. complex grid functions ``(1 + i) v / sqrt(2)`` and
``(1 - i) v / sqrt(2)``, with eigenvalues ``(Re c(m) +/- Im c(m)) / 2`` where
``c(m)`` is the normalized DFT of the kernel row. Each mode carries one real
coefficient, so a basis truncated at order ``m`` holds ``2m`` modes and the
input dimension is ``2m``.

Inner products use the discrete weight ``1/N``::

    <f, g> = (1/N) * Re(sum_x f(x) * conj(g(x)))

so mode norms do not depend on the grid resolution and the full spectrum
sums to ``sigma_u_sq``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonHermitianKernel

# Negative eigenvalues above this fraction of sigma_u_sq are round-off or the
# slight indefiniteness of the kernel tail and get clamped to zero.
NEGATIVE_TOLERANCE = 1e-5


@dataclass(frozen=True)
class KernelSpec:
    sigma_u_sq: float = 1.0
    l_u: float = 0.35
    grid_size: int = 512

    def __post_init__(self):
        if not self.sigma_u_sq > 0:
            raise ValueError(f"sigma_u_sq must be positive, got {self.sigma_u_sq}")
        if not self.l_u > 0:
            raise ValueError(f"l_u must be positive, got {self.l_u}")
        n = int(self.grid_size)
        if n < 8 or n & (n - 1):
            raise ValueError(f"grid_size must be a power of two >= 8, got {self.grid_size}")

    @property
    def grid(self):
        return np.arange(self.grid_size) / self.grid_size


@dataclass(frozen=True, eq=False)
class KLBasis:
    """Truncated KL basis.

    ``eigenvalues`` has length ``2 * m`` in descending order. ``modes`` is a
    ``(2m, grid_size)`` complex array. ``wavenumbers``, ``kinds`` (0 for
    cosine type, 1 for sine type) and ``signs`` (+1 for the ``1 + i``
    combination, -1 for ``1 - i``) identify each mode.
    """

    spec: KernelSpec
    m: int
    eigenvalues: np.ndarray
    modes: np.ndarray
    wavenumbers: np.ndarray
    kinds: np.ndarray
    signs: np.ndarray

    @property
    def dim(self):
        return 2 * self.m

    @property
    def grid_size(self):
        return self.spec.grid_size

    def __eq__(self, other):
        if not isinstance(other, KLBasis):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.m == other.m
            and np.array_equal(self.eigenvalues, other.eigenvalues)
            and np.array_equal(self.modes, other.modes)
        )


def kernel(x, x_prime, spec):
    s = np.sin(np.pi * (np.asarray(x) - np.asarray(x_prime))) ** 2
    return spec.sigma_u_sq * np.exp(2j * s) * np.exp(-2.0 * s / spec.l_u**2)


def build_kernel_row(spec):
    """Return ``k(x, 0)`` on the grid ``x = j / grid_size``."""
    return kernel(spec.grid, 0.0, spec)


def kernel_spectrum(spec):
    """Unclamped eigenvalues of the real-process covariance, by wavenumber.

    Returns ``(wavenumbers, plus, minus)`` for ``m = 0 .. N/2``: ``plus`` and
    ``minus`` hold ``(Re c(m) +/- Im c(m)) / 2`` with ``c`` the DFT of the
    kernel row divided by ``N``.
    """
    n = spec.grid_size
    c_hat = np.fft.fft(build_kernel_row(spec)) / n
    m = np.arange(n // 2 + 1)
    # c_hat is even in m analytically; average the pair so that cosine and
    # sine modes of one wavenumber share a bit-identical eigenvalue.
    sym = 0.5 * (c_hat[m] + c_hat[-m])
    return m, 0.5 * (sym.real + sym.imag), 0.5 * (sym.real - sym.imag)


def _real_fourier_mode(m, kind, n):
    x = np.arange(n) / n
    if m == 0:
        return np.ones(n)
    if 2 * m == n:
        return np.cos(np.pi * n * x)
    if kind == 0:
        return np.sqrt(2.0) * np.cos(2 * np.pi * m * x)
    return np.sqrt(2.0) * np.sin(2 * np.pi * m * x)


def full_spectrum(spec):
    """All ``2 * grid_size`` eigenvalues with their mode labels, sorted.

    Ordering is descending eigenvalue; ties go to the smaller wavenumber,
    then cosine before sine, then the ``1 + i`` combination first.
    """
    n = spec.grid_size
    wn, plus, minus = kernel_spectrum(spec)
    vals, wns, kinds, signs = [], [], [], []
    for m in wn:
        has_sine = 0 < m < n // 2
        for kind in (0, 1) if has_sine else (0,):
            for sign, val in ((1, plus[m]), (-1, minus[m])):
                vals.append(val)
                wns.append(m)
                kinds.append(kind)
                signs.append(sign)
    vals = np.array(vals)
    wns = np.array(wns)
    kinds = np.array(kinds)
    signs = np.array(signs)
    order = np.lexsort((-signs, kinds, wns, -vals))
    return vals[order], wns[order], kinds[order], signs[order]


def eigendecompose(spec, m):
    """Leading ``2 * m`` KL modes of the kernel, computed through one FFT."""
    n = spec.grid_size
    if not 1 <= m <= n:
        raise ValueError(f"truncation order must lie in [1, {n}], got {m}")
    vals, wns, kinds, signs = full_spectrum(spec)
    floor = -NEGATIVE_TOLERANCE * spec.sigma_u_sq
    if vals.min() < floor:
        raise NonHermitianKernel(
            f"kernel eigenvalue {vals.min():.3e} is below {floor:.1e}; check the kernel row"
        )
    vals = np.maximum(vals, 0.0)
    keep = slice(0, 2 * m)
    modes = np.empty((2 * m, n), dtype=complex)
    for j, (wn, kind, sign) in enumerate(zip(wns[keep], kinds[keep], signs[keep])):
        phase = (1 + 1j * sign) / np.sqrt(2.0)
        modes[j] = phase * _real_fourier_mode(int(wn), int(kind), n)
    return KLBasis(
        spec=spec,
        m=int(m),
        eigenvalues=vals[keep].copy(),
        modes=modes,
        wavenumbers=wns[keep].copy(),
        kinds=kinds[keep].copy(),
        signs=signs[keep].copy(),
    )


def inner(f, g):
    """Discrete real inner product with the ``1/N`` weight, over the last axis."""
    n = np.shape(f)[-1]
    return np.real(np.sum(f * np.conj(g), axis=-1)) / n


def sample_lhs(basis, n, z_star, seed):
    """Latin-hypercube sample of ``n`` points in ``[-z_star, z_star]^(2m)``.

    Each coordinate visits every one of the ``n`` equal-width strata exactly
    once, with a uniform draw inside the stratum. ``basis`` may also be an
    integer dimension.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if not z_star > 0:
        raise ValueError("z_star must be positive")
    dim = basis if isinstance(basis, (int, np.integer)) else basis.dim
    rng = np.random.default_rng(seed)
    out = np.empty((n, dim))
    for j in range(dim):
        strata = rng.permutation(n)
        out[:, j] = (strata + rng.random(n)) / max(n, 1)
    return z_star * (2.0 * out - 1.0)


def synthesize_field(basis, alpha):
    """Initial condition ``sum_j alpha_j sqrt(lambda_j) psi_j`` on the grid.

    ``alpha`` may be one coefficient vector or a ``(n, 2m)`` batch.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape[-1] != basis.dim:
        raise DimensionMismatch(
            f"coefficient vector has length {alpha.shape[-1]}, basis expects {basis.dim}"
        )
    return (alpha * np.sqrt(basis.eigenvalues)) @ basis.modes


def project(basis, field):
    """Coordinates ``<u, psi_j>`` of a field, i.e. ``alpha_j sqrt(lambda_j)``."""
    field = np.asarray(field)
    return inner(field[..., None, :], basis.modes)


def to_sections(basis):
    modes = basis.modes
    interleaved = np.empty(modes.shape[:-1] + (2 * modes.shape[-1],))
    interleaved[..., 0::2] = modes.real
    interleaved[..., 1::2] = modes.imag
    return {"kl_eigenvalues": basis.eigenvalues, "kl_modes": interleaved}
