"""Pseudospectral ETDRK4 integrator for the MMT dispersive wave model.

The equation on the periodic unit interval is::

    i u_t = |d_x|^a u + lam |d_x|^(-b/4) ( ||d_x|^(-b/4) u|^2 |d_x|^(-b/4) u ) + i D u

with ``|d_x|^s`` acting as ``|k|^s`` in Fourier space, ``k = 2 pi m``. In
spectral form ``v_t = L v + N(v)`` with the diagonal linear part::

    L(k) = -i |k|^a + D(k)

treated exactly by exponential time differencing (Cox-Matthews ETDRK4 with
the Kassam-Trefethen contour evaluation of the phi-functions), and::

    N(v) = -i lam F[ |d_x|^(-b/4) ( |w|^2 w ) ],   w = F^-1[ |d_x|^(-b/4) v ]

dealiased with the 2/3 rule.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BlowUp, DimensionMismatch
from .kl import synthesize_field

BLOWUP_THRESHOLD = 1e6

# RK4 stability interval on the imaginary axis is 2*sqrt(2); the cubic term
# rotates the phase at rate |lam| |u|^2.
STABILITY_LIMIT = 2.8

CONTOUR_POINTS = 16
CHUNK_ROWS = 16


@dataclass(frozen=True)
class DissipationSpec:
    cutoff_fraction: float = 2.0 / 3.0
    strength: float = 10.0
    exponent: float = 8.0

    def __post_init__(self):
        if not 0.0 <= self.cutoff_fraction <= 1.0:
            raise ValueError("cutoff_fraction must lie in [0, 1]")
        if self.strength < 0:
            raise ValueError("dissipation strength must be non-negative")
        if self.exponent < 2:
            raise ValueError("dissipation exponent must be >= 2")


@dataclass(frozen=True)
class MMTParams:
    lam: float = -4.0
    alpha_m: float = 0.5
    beta: float = 0.0
    grid_size: int = 512
    t_end: float = 50.0
    dt: float = 5e-3
    dissipation: DissipationSpec = field(default_factory=DissipationSpec)

    def __post_init__(self):
        n = int(self.grid_size)
        if n < 8 or n & (n - 1):
            raise ValueError(f"grid_size must be a power of two >= 8, got {self.grid_size}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if not self.alpha_m > 0:
            raise ValueError("alpha_m must be positive")

    @property
    def n_steps(self):
        steps = int(round(self.t_end / self.dt))
        if abs(steps * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ValueError(f"t_end={self.t_end} is not a whole number of steps of dt={self.dt}")
        return steps


@dataclass
class ComplexField:
    values: np.ndarray
    time: float = 0.0


def wavenumbers(n):
    """Angular wavenumbers ``2 pi m`` in FFT order, ``m`` in ``[-n/2, n/2)``."""
    return 2 * np.pi * np.fft.fftfreq(n, d=1.0 / n)


def fractional_symbol(k, exponent):
    """Fourier multiplier of ``|d_x|^exponent``; the ``k = 0`` entry is 1 only for exponent 0."""
    absk = np.abs(k)
    if exponent == 0:
        return np.ones_like(absk)
    out = np.zeros_like(absk)
    nz = absk > 0
    out[nz] = absk[nz] ** exponent
    return out


def apply_fractional_derivative(field, exponent):
    values = np.asarray(field.values)
    sym = fractional_symbol(wavenumbers(values.shape[-1]), exponent)
    out = np.fft.ifft(sym * np.fft.fft(values, axis=-1), axis=-1)
    return ComplexField(out, field.time)


def dissipation_symbol(k, spec):
    """Selective high-wavenumber damping, zero below the cutoff."""
    absk = np.abs(k)
    k_max = absk.max()
    k_c = spec.cutoff_fraction * k_max
    out = np.zeros_like(absk)
    if spec.strength == 0 or k_max <= k_c:
        return out
    hi = absk > k_c
    out[hi] = -spec.strength * ((absk[hi] - k_c) / (k_max - k_c)) ** spec.exponent
    return out


def dealias_mask(n):
    m = np.fft.fftfreq(n, d=1.0 / n)
    return np.abs(m) <= n // 3


class ETDRK4:
    """Precomputed ETDRK4 stepper for one set of MMT parameters."""

    def __init__(self, params):
        self.params = params
        n = params.grid_size
        dt = params.dt
        k = wavenumbers(n)
        self.linear = -1j * fractional_symbol(k, params.alpha_m) + dissipation_symbol(
            k, params.dissipation
        )
        self.smoothing = None if params.beta == 0 else fractional_symbol(k, -params.beta / 4.0)
        self.mask = dealias_mask(n)

        lh = dt * self.linear
        self.e_full = np.exp(lh)
        self.e_half = np.exp(lh / 2)
        # L is complex, so the contour is the full circle around each dt*L.
        roots = np.exp(2j * np.pi * (np.arange(CONTOUR_POINTS) + 0.5) / CONTOUR_POINTS)
        lr = lh[:, None] + roots[None, :]
        exp_lr = np.exp(lr)
        lr3 = lr**3
        self.q = dt * np.mean((np.exp(lr / 2) - 1) / lr, axis=1)
        self.f1 = dt * np.mean((-4 - lr + exp_lr * (4 - 3 * lr + lr**2)) / lr3, axis=1)
        self.f2 = dt * np.mean((2 + lr + exp_lr * (lr - 2)) / lr3, axis=1)
        self.f3 = dt * np.mean((-4 - 3 * lr - lr**2 + exp_lr * (4 - lr)) / lr3, axis=1)
        factor = (-1j * params.lam) * self.mask
        if self.smoothing is not None:
            factor = factor * self.smoothing
        self.nl_factor = np.ascontiguousarray(factor, dtype=complex)

    def nonlinear(self, v):
        """Return ``N(v)`` for a 2-D spectral batch and ``max_x |w|`` per row."""
        raw, peak = self._cubed(v)
        return self.nl_factor * raw, peak

    def _cubed(self, v):
        # unscaled F[|w|^2 w]; the stage kernels apply nl_factor
        if self.smoothing is None:
            w = np.fft.ifft(v, axis=-1)
        else:
            w = np.fft.ifft(self.smoothing * v, axis=-1)
        peak_sq = np.empty(w.shape[0])
        _kernels.cube_inplace(w, peak_sq)
        return np.fft.fft(w, axis=-1, out=w), np.sqrt(peak_sq)

    def step_spectral(self, v):
        """One step on a ``(rows, n)`` spectral batch.

        Also returns ``max_x |w|`` per row at the start of the step, where
        ``w`` is ``u`` (or its smoothed version when beta is nonzero).
        """
        g = self.nl_factor
        ev = np.empty_like(v)
        a = np.empty_like(v)
        nv, peak = self._cubed(v)
        _kernels.stage_a(v, nv, g, self.e_half, self.q, ev, a)
        na, _ = self._cubed(a)
        b = ev
        _kernels.stage_b(ev, na, g, self.q, b)
        nb, _ = self._cubed(b)
        c = np.empty_like(v)
        _kernels.stage_c(a, nb, nv, g, self.e_half, self.q, c)
        nc, _ = self._cubed(c)
        out = a
        _kernels.combine(v, nv, na, nb, nc, g, self.e_full, self.f1, self.f2, self.f3, out)
        return out, peak


def output_map(values):
    """``max_x |Re u(x)|`` along the last axis."""
    return np.max(np.abs(np.real(values)), axis=-1)


def check_time_step(values, params):
    amp2 = np.max(np.abs(values) ** 2) if np.size(values) else 0.0
    rate = params.dt * abs(params.lam) * amp2
    if rate > STABILITY_LIMIT:
        raise ValueError(
            f"dt={params.dt} too large for initial amplitude: "
            f"dt*|lam|*max|u|^2 = {rate:.3f} > {STABILITY_LIMIT}"
        )


def step(field, params, stepper=None):
    """Advance a single field by one time step."""
    values = np.asarray(field.values, dtype=complex)
    if values.shape[-1] != params.grid_size:
        raise DimensionMismatch(f"field has {values.shape[-1]} points, params expect {params.grid_size}")
    check_time_step(values, params)
    stepper = stepper or ETDRK4(params)
    v, _ = stepper.step_spectral(np.atleast_2d(np.fft.fft(values, axis=-1)))
    out = np.fft.ifft(v, axis=-1).reshape(values.shape)
    t = field.time + params.dt
    if not np.all(np.isfinite(out)) or np.max(np.abs(out)) > BLOWUP_THRESHOLD:
        raise BlowUp(f"field exceeded {BLOWUP_THRESHOLD:g} at t={t:g}", time=t)
    return ComplexField(out, t)


def integrate(values, params, stepper=None):
    """Integrate a ``(rows, grid_size)`` batch to ``params.t_end``.

    Returns ``(final_values, blown, blow_times)``. Rows that blow up are
    flagged, zeroed and left out of further arithmetic checks; ``blow_times``
    is NaN for healthy rows.
    """
    values = np.atleast_2d(np.asarray(values, dtype=complex))
    rows = values.shape[0]
    stepper = stepper or ETDRK4(params)
    v = np.fft.fft(values, axis=-1)
    blown = np.zeros(rows, dtype=bool)
    blow_times = np.full(rows, np.nan)
    n_steps = params.n_steps
    # overflow in rows about to be flagged is expected; those rows are zeroed
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(n_steps):
            v, peak = stepper.step_spectral(v)
            _flag(peak, s * params.dt, blown, blow_times, v)
        final = np.fft.ifft(v, axis=-1)
    _flag(np.max(np.abs(final), axis=-1), n_steps * params.dt, blown, blow_times, final)
    return final, blown, blow_times


def _flag(peak, t, blown, blow_times, state):
    bad = ~(peak <= BLOWUP_THRESHOLD) & ~blown
    if bad.any():
        blown[bad] = True
        blow_times[bad] = t
        state[bad] = 0.0


def simulate(alpha, basis, params):
    """Synthesize the initial condition for ``alpha``, integrate, return ``(field, y)``."""
    alpha = np.asarray(alpha, dtype=float)
    u0 = synthesize_field(basis, alpha)
    if u0.shape[-1] != params.grid_size:
        raise DimensionMismatch("basis grid and solver grid differ")
    check_time_step(u0, params)
    final, blown, times = integrate(u0[None, :], params)
    if blown[0]:
        raise BlowUp(f"field exceeded {BLOWUP_THRESHOLD:g} at t={times[0]:g}", time=times[0], alpha=alpha)
    field = ComplexField(final[0], params.n_steps * params.dt)
    return field, float(output_map(final[0]))


def simulate_batch(alphas, basis, params, threads=1, keep_fields=False):
    """Simulate many coefficient vectors in fixed-size chunks.

    Chunking is independent of ``threads`` so results do not depend on the
    worker count. Returns ``(u0, final_or_None, y, blown, blow_times)``.
    """
    alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
    n = alphas.shape[0]
    u0 = synthesize_field(basis, alphas) if n else np.zeros((0, params.grid_size), complex)
    if u0.shape[-1] != params.grid_size:
        raise DimensionMismatch("basis grid and solver grid differ")
    check_time_step(u0, params)
    stepper = ETDRK4(params)
    chunks = [slice(i, min(i + CHUNK_ROWS, n)) for i in range(0, n, CHUNK_ROWS)]

    def run(sl):
        return integrate(u0[sl], params, stepper)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(sl) for sl in chunks]

    y = np.empty(n)
    blown = np.zeros(n, dtype=bool)
    times = np.full(n, np.nan)
    final = np.empty_like(u0) if keep_fields else None
    for sl, (f, b, t) in zip(chunks, results):
        y[sl] = output_map(f)
        blown[sl] = b
        times[sl] = t
        if keep_fields:
            final[sl] = f
    return u0, final, y, blown, times
