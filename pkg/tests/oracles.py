"""Independent reference implementations used only by the tests.

Each oracle takes a different computational route from the library code:
dense linear algebra instead of FFT diagonalization, plain numpy instead of
the fused kernels, closed forms instead of iterative solves.
"""

import numpy as np


# --- KL basis ------------------------------------------------------------------------


def dense_kernel_matrix(sigma_u_sq, l_u, n):
    x = np.arange(n) / n
    s = np.sin(np.pi * (x[:, None] - x[None, :])) ** 2
    return sigma_u_sq * np.exp(2j * s) * np.exp(-2.0 * s / l_u**2)


def dense_kl_eigenvalues(sigma_u_sq, l_u, n):
    """Eigenvalues of the real-process covariance by dense symmetric solve.

    The real vector ``(Re u, Im u)`` has covariance
    ``1/2 [[Re K, Im K], [Im K, Re K]]``; dividing by ``n`` gives the operator
    eigenvalues under the ``1/n``-weighted inner product. Descending order.
    """
    K = dense_kernel_matrix(sigma_u_sq, l_u, n)
    C = 0.5 * np.block([[K.real, K.imag], [K.imag, K.real]])
    np.testing.assert_allclose(C, C.T, atol=1e-14)
    return np.sort(np.linalg.eigvalsh(C))[::-1] / n


# --- MMT solver ----------------------------------------------------------------------


def reference_etdrk4_step(v, linear, nl, dt, contour=32):
    """One Cox-Matthews ETDRK4 step written directly from the scheme.

    ``linear`` is the diagonal of L, ``nl`` maps a spectral vector to N(v).
    Uses twice as many contour points as the library.
    """
    lh = dt * linear
    roots = np.exp(2j * np.pi * (np.arange(contour) + 0.5) / contour)
    lr = lh[:, None] + roots[None, :]
    phi = lambda f: dt * np.mean(f(lr), axis=1)
    q = phi(lambda z: (np.exp(z / 2) - 1) / z)
    f1 = phi(lambda z: (-4 - z + np.exp(z) * (4 - 3 * z + z**2)) / z**3)
    f2 = phi(lambda z: (2 + z + np.exp(z) * (z - 2)) / z**3)
    f3 = phi(lambda z: (-4 - 3 * z - z**2 + np.exp(z) * (4 - z)) / z**3)
    e, e2 = np.exp(lh), np.exp(lh / 2)
    nv = nl(v)
    a = e2 * v + q * nv
    na = nl(a)
    b = e2 * v + q * na
    nb = nl(b)
    c = e2 * a + q * (2 * nb - nv)
    nc = nl(c)
    return e * v + nv * f1 + 2 * (na + nb) * f2 + nc * f3


def mmt_nonlinear(lam, n):
    m = np.fft.fftfreq(n, d=1.0 / n)
    mask = np.abs(m) <= n // 3

    def nl(v):
        u = np.fft.ifft(v)
        return -1j * lam * mask * np.fft.fft(np.abs(u) ** 2 * u)

    return nl


def constant_field_solution(c, lam, t):
    """``i u_t = lam |u|^2 u`` with constant data: a pure phase rotation."""
    return c * np.exp(-1j * lam * abs(c) ** 2 * t)


# --- Gaussian process ----------------------------------------------------------------


def dense_gp_posterior(A, Y, Q, theta_sigma, theta, sigma_n):
    """Posterior mean and variance from explicit inverses (no Cholesky)."""
    A, Q = np.atleast_2d(A), np.atleast_2d(Q)

    def k(P, R):
        d = (P[:, None, :] - R[None, :, :]) / theta
        return theta_sigma * np.exp(-0.5 * np.sum(d**2, axis=-1))

    Kinv = np.linalg.inv(k(A, A) + sigma_n**2 * np.eye(len(A)))
    Ks = k(A, Q)
    mu = Ks.T @ Kinv @ Y
    var = theta_sigma - np.einsum("iq,ij,jq->q", Ks, Kinv, Ks)
    return mu, var


def dense_gp_nll(A, Y, theta_sigma, theta, sigma_n):
    A = np.atleast_2d(A)
    d = (A[:, None, :] - A[None, :, :]) / theta
    C = theta_sigma * np.exp(-0.5 * np.sum(d**2, axis=-1)) + sigma_n**2 * np.eye(len(A))
    _, logdet = np.linalg.slogdet(C)
    return 0.5 * Y @ np.linalg.solve(C, Y) + 0.5 * logdet + 0.5 * len(Y) * np.log(2 * np.pi)


# --- finite differences --------------------------------------------------------------


def central_difference(f, arrays, step=1e-5):
    """Gradient of scalar ``f()`` w.r.t. every entry of the given arrays (mutated in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + step
            fp = f()
            a[idx] = old - step
            fm = f()
            a[idx] = old
            g[idx] = (fp - fm) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
