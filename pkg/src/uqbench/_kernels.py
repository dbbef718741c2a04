"""Fused elementwise loops for the ETDRK4 stages.

Each stage of the step is a handful of diagonal multiply-adds over a
``(rows, n)`` complex array; numpy would allocate a temporary per operation.
Nonlinear terms arrive unscaled (``F[|w|^2 w]``) and the diagonal factor
``g`` is applied inside each stage.
"""

import numba


@numba.njit(cache=True)
def cube_inplace(w, peak_sq):
    """``w <- |w|^2 w`` and the row-wise maximum of ``|w|^2`` before cubing."""
    rows, n = w.shape
    for i in range(rows):
        top = 0.0
        for j in range(n):
            z = w[i, j]
            m = z.real * z.real + z.imag * z.imag
            # NaN compares false, so propagate it explicitly
            if m > top or m != m:
                top = m
            w[i, j] = m * z
        peak_sq[i] = top


@numba.njit(cache=True)
def stage_a(v, nv, g, e_half, q, ev, a):
    rows, n = v.shape
    for i in range(rows):
        for j in range(n):
            e = e_half[j] * v[i, j]
            ev[i, j] = e
            a[i, j] = e + q[j] * (g[j] * nv[i, j])


@numba.njit(cache=True)
def stage_b(ev, na, g, q, b):
    rows, n = ev.shape
    for i in range(rows):
        for j in range(n):
            b[i, j] = ev[i, j] + q[j] * (g[j] * na[i, j])


@numba.njit(cache=True)
def stage_c(a, nb, nv, g, e_half, q, c):
    rows, n = a.shape
    for i in range(rows):
        for j in range(n):
            c[i, j] = e_half[j] * a[i, j] + q[j] * (g[j] * (2.0 * nb[i, j] - nv[i, j]))


@numba.njit(cache=True)
def combine(v, nv, na, nb, nc, g, e_full, f1, f2, f3, out):
    rows, n = v.shape
    for i in range(rows):
        for j in range(n):
            out[i, j] = e_full[j] * v[i, j] + g[j] * (
                f1[j] * nv[i, j] + 2.0 * f2[j] * (na[i, j] + nb[i, j]) + f3[j] * nc[i, j]
            )
