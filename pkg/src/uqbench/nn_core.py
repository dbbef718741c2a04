"""Small feed-forward network engine with hand-written backpropagation.

Dense ReLU stacks with optional inverted dropout, optional mean-field
Gaussian (variational) weights, and either a deterministic scalar head or a
Gaussian head with one trained homoskedastic log sigma_n.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedLoss, DimensionMismatch

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
MODES = ("train", "infer_deterministic", "infer_stochastic")
LOSSES = ("mse", "nll", "elbo")
PRIOR_STD = 1.0
# initial posterior std of variational weights, relative to the He std
INIT_SIGMA_FRACTION = 0.05
SIGMA_N_INIT = 0.1
SIGMA_N_FLOOR = 1e-4


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 20.0, y, np.log(np.expm1(np.minimum(y, 20.0))))


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden: tuple = (64, 64, 64, 64)
    activation: str = "relu"
    dropout_rate: float = 0.0
    head: str = "deterministic"
    variational: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.head not in ("deterministic", "gaussian"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def widths(self):
        return (self.input_dim, *self.hidden, 1)

    @property
    def n_layers(self):
        return len(self.hidden) + 1


@dataclass(eq=False)
class NetworkState:
    """Parameters of one network. ``weights`` hold the means when variational."""

    weights: list
    biases: list
    rho_w: list = None
    rho_b: list = None
    log_sigma_n: np.ndarray = None
    log_sigma_floor: float = -np.inf
    history: list = field(default_factory=list)

    def arrays(self):
        """Every trainable array, in a fixed order; updates happen in place."""
        out = list(self.weights) + list(self.biases)
        if self.rho_w is not None:
            out += list(self.rho_w) + list(self.rho_b)
        if self.log_sigma_n is not None:
            out.append(self.log_sigma_n)
        return out

    @property
    def sigma_n(self):
        return None if self.log_sigma_n is None else float(np.exp(self.log_sigma_n[0]))

    def copy(self):
        cp = lambda xs: None if xs is None else [x.copy() for x in xs]
        return NetworkState(
            cp(self.weights),
            cp(self.biases),
            cp(self.rho_w),
            cp(self.rho_b),
            None if self.log_sigma_n is None else self.log_sigma_n.copy(),
            self.log_sigma_floor,
            list(self.history),
        )

    def __eq__(self, other):
        if not isinstance(other, NetworkState):
            return NotImplemented
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 32
    learning_rate: float = 1e-3
    l2_weight: float = 0.0
    seed: int = 0
    # "uniform": every batch gets kl_scale 1; "blundell": 2^(M-i)/(2^M-1), rescaled by M
    kl_weight_schedule: str = "uniform"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.l2_weight < 0 or not self.learning_rate > 0:
            raise ValueError("learning rate must be positive and l2 weight non-negative")
        if self.kl_weight_schedule not in ("uniform", "blundell"):
            raise ValueError(f"unknown KL schedule {self.kl_weight_schedule!r}")

    def kl_scales(self, num_batches):
        if self.kl_weight_schedule == "uniform":
            return np.ones(num_batches)
        expo = np.arange(num_batches - 1, -1, -1, dtype=float)
        w = 2.0**expo / (2.0**num_batches - 1.0)
        return num_batches * w


def init_state(spec, rng, output_std=1.0):
    """He-uniform weights, zero biases."""
    weights, biases, rho_w, rho_b = [], [], [], []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
        if spec.variational:
            rho = float(inverse_softplus(INIT_SIGMA_FRACTION * np.sqrt(2.0 / fan_in)))
            rho_w.append(np.full((fan_in, fan_out), rho))
            rho_b.append(np.full(fan_out, rho))
    state = NetworkState(weights, biases)
    if spec.variational:
        state.rho_w, state.rho_b = rho_w, rho_b
    if spec.head == "gaussian":
        scale = output_std if output_std > 0 else 1.0
        state.log_sigma_n = np.array([np.log(SIGMA_N_INIT * scale)])
        state.log_sigma_floor = float(np.log(SIGMA_N_FLOOR * scale))
    return state


@dataclass
class Noise:
    """One realization of every stochastic element of a forward pass."""

    masks: list  # per layer, None or a (batch, fan_in) scaled keep mask
    eps_w: list = None
    eps_b: list = None


def _stochastic(mode):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    return mode != "infer_deterministic"


def sample_noise(state, spec, batch, mode, rng):
    """Dropout masks (per row) and weight noise (shared by the batch)."""
    active = _stochastic(mode)
    masks = [None] * spec.n_layers
    if active and spec.dropout_rate > 0:
        keep = 1.0 - spec.dropout_rate
        for layer in range(1, spec.n_layers):
            fan_in = spec.widths[layer]
            masks[layer] = (rng.random((batch, fan_in)) < keep) / keep
    noise = Noise(masks)
    if active and spec.variational:
        noise.eps_w = [rng.standard_normal(w.shape) for w in state.weights]
        noise.eps_b = [rng.standard_normal(b.shape) for b in state.biases]
    return noise


def _layer_params(state, noise, layer):
    W, b = state.weights[layer], state.biases[layer]
    if noise.eps_w is not None:
        W = W + noise.eps_w[layer] * softplus(state.rho_w[layer])
        b = b + noise.eps_b[layer] * softplus(state.rho_b[layer])
    return W, b


def _forward(state, spec, x, noise):
    h = x
    cache = []
    for layer in range(spec.n_layers):
        mask = noise.masks[layer]
        if mask is not None:
            h = h * mask
        W, b = _layer_params(state, noise, layer)
        z = h @ W + b
        cache.append((h, W, z))
        h = np.maximum(z, 0.0) if layer < spec.n_layers - 1 else z
    return h[:, 0], cache


def _as_batch(x, spec):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != spec.input_dim:
        raise DimensionMismatch(f"input has {x.shape[-1]} features, network expects {spec.input_dim}")
    return x


def forward(state, spec, x, mode="infer_deterministic", rng=None, noise=None):
    """Network output for each row of ``x``; ``(mu, sigma_n)`` for a Gaussian head."""
    x = _as_batch(x, spec)
    if noise is None:
        if _stochastic(mode) and rng is None:
            rng = np.random.default_rng()
        noise = sample_noise(state, spec, len(x), mode, rng)
    out, _ = _forward(state, spec, x, noise)
    if spec.head == "gaussian":
        return out, state.sigma_n
    return out


def kl_divergence(state):
    """KL from the mean-field weight posterior to the N(0, PRIOR_STD^2) prior."""
    total = 0.0
    for mu, rho in zip(state.weights + state.biases, state.rho_w + state.rho_b):
        s = softplus(rho)
        total += 0.5 * np.sum((s**2 + mu**2) / PRIOR_STD**2 - 1.0 - 2.0 * np.log(s / PRIOR_STD))
    return float(total)


def _kl_grads(state):
    gw, gr = [], []
    for mu, rho in zip(state.weights + state.biases, state.rho_w + state.rho_b):
        s = softplus(rho)
        gw.append(mu / PRIOR_STD**2)
        gr.append((s / PRIOR_STD**2 - 1.0 / s) * sigmoid(rho))
    return gw, gr


def l2_penalty(state, l2_weight):
    return l2_weight * sum(float(np.sum(W**2)) for W in state.weights)


def l2_gradients(state, l2_weight):
    """Gradient of the L2 penalty, laid out like ``state.arrays()``."""
    grads = [np.zeros_like(a) for a in state.arrays()]
    for i, W in enumerate(state.weights):
        grads[i] = 2.0 * l2_weight * W
    return grads


def loss(state, spec, batch, kind, kl_scale=1.0, num_batches=1, l2_weight=0.0, noise=None, rng=None):
    """Mean batch loss and gradients laid out like ``state.arrays()``.

    ``elbo`` adds ``kl_scale * KL / (num_batches * batch_size)`` to the head's
    data term (squared error or Gaussian NLL). Pass ``noise`` to freeze the
    dropout masks and weight noise.
    """
    if kind not in LOSSES:
        raise ValueError(f"unknown loss {kind!r}")
    if kind == "nll" and spec.head != "gaussian":
        raise ValueError("nll loss needs a gaussian head")
    if kind == "elbo" and not spec.variational:
        raise ValueError("elbo loss needs variational layers")
    x, y = batch
    x = _as_batch(x, spec)
    y = np.asarray(y, dtype=float).reshape(-1)
    B = len(y)
    if B == 0:
        raise ValueError("empty batch")
    if noise is None:
        noise = sample_noise(state, spec, B, "train", rng if rng is not None else np.random.default_rng())
    out, cache = _forward(state, spec, x, noise)
    resid = out - y

    grad_log_sigma = None
    if spec.head == "gaussian":
        ls = state.log_sigma_n[0]
        inv_var = np.exp(-2.0 * ls)
        value = 0.5 * np.mean(resid**2 * inv_var + 2.0 * ls + LOG_2PI)
        d_out = resid * inv_var / B
        grad_log_sigma = np.array([np.mean(1.0 - resid**2 * inv_var)])
    else:
        value = np.mean(resid**2)
        d_out = 2.0 * resid / B

    n_layers = spec.n_layers
    gW = [None] * n_layers
    gb = [None] * n_layers
    delta = d_out[:, None]
    for layer in range(n_layers - 1, -1, -1):
        h, W, z = cache[layer]
        if layer < n_layers - 1:
            delta = delta * (z > 0)
        gW[layer] = h.T @ delta
        gb[layer] = delta.sum(0)
        if layer > 0:
            delta = delta @ W.T
            if noise.masks[layer] is not None:
                delta = delta * noise.masks[layer]

    grads = gW + gb
    if spec.variational:
        eps = (noise.eps_w or [np.zeros_like(w) for w in state.weights]) + (
            noise.eps_b or [np.zeros_like(b) for b in state.biases]
        )
        rhos = state.rho_w + state.rho_b
        grads += [g * e * sigmoid(r) for g, e, r in zip(grads, eps, rhos)]
    if grad_log_sigma is not None:
        grads.append(grad_log_sigma)

    if kind == "elbo":
        factor = kl_scale / (num_batches * B)
        value += factor * kl_divergence(state)
        kw, kr = _kl_grads(state)
        n_mean = len(kw)
        for i in range(n_mean):
            grads[i] = grads[i] + factor * kw[i]
            grads[n_mean + i] = grads[n_mean + i] + factor * kr[i]
    if l2_weight > 0:
        value += l2_penalty(state, l2_weight)
        for i, g in enumerate(l2_gradients(state, l2_weight)[: n_layers]):
            grads[i] = grads[i] + g
    return float(value), grads


class Adam:
    def __init__(self, arrays, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = learning_rate, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def default_loss(spec):
    if spec.variational:
        return "elbo"
    return "nll" if spec.head == "gaussian" else "mse"


def train(spec, data, cfg, kind=None, state=None):
    """Adam over shuffled mini-batches; deterministic for a given ``cfg.seed``.

    The returned state carries the mean loss of each epoch in ``history``.
    """
    x, y = data
    x = _as_batch(x, spec)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = len(y)
    if n == 0 or len(x) != n:
        raise DimensionMismatch("training inputs and outputs disagree or are empty")
    kind = kind or default_loss(spec)
    rng = np.random.default_rng(cfg.seed)
    if state is None:
        state = init_state(spec, rng, float(np.std(y)))
    arrays = state.arrays()
    opt = Adam(arrays, cfg.learning_rate)
    batch = min(cfg.batch_size, n)
    num_batches = -(-n // batch)
    scales = cfg.kl_scales(num_batches)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for i in range(num_batches):
            idx = order[i * batch : (i + 1) * batch]
            value, grads = loss(
                state,
                spec,
                (x[idx], y[idx]),
                kind,
                kl_scale=scales[i],
                num_batches=num_batches,
                l2_weight=cfg.l2_weight,
                rng=rng,
            )
            if not np.isfinite(value) or not all(np.isfinite(g).all() for g in grads):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}, batch {i}")
            opt.step(arrays, grads)
            if state.log_sigma_n is not None:
                np.maximum(state.log_sigma_n, state.log_sigma_floor, out=state.log_sigma_n)
            total += value * len(idx)
        state.history.append(total / n)
    log.debug("trained %d epochs, final loss %.6g", cfg.epochs, state.history[-1])
    return state


def to_sections(state, prefix):
    secs = {}
    for name in ("weights", "biases", "rho_w", "rho_b"):
        arrs = getattr(state, name)
        if arrs is None:
            continue
        for i, a in enumerate(arrs):
            secs[f"{prefix}{name}_{i}"] = a
    if state.log_sigma_n is not None:
        secs[f"{prefix}log_sigma_n"] = np.array([state.log_sigma_n[0], state.log_sigma_floor])
    secs[f"{prefix}history"] = np.asarray(state.history, dtype=float)
    return secs


def from_sections(sections, prefix, spec):
    def grab(name):
        key = f"{prefix}{name}_0"
        if key not in sections:
            return None
        return [sections[f"{prefix}{name}_{i}"].reshape(a, b) if name.endswith("w") or name == "weights"
                else sections[f"{prefix}{name}_{i}"].reshape(b)
                for i, (a, b) in enumerate(zip(spec.widths[:-1], spec.widths[1:]))]

    state = NetworkState(grab("weights"), grab("biases"), grab("rho_w"), grab("rho_b"))
    sig = sections.get(f"{prefix}log_sigma_n")
    if sig is not None:
        state.log_sigma_n = np.array([sig[0]])
        state.log_sigma_floor = float(sig[1])
    state.history = list(sections.get(f"{prefix}history", np.zeros(0)))
    return state
