"""DDPM machinery in embedding space: schedule, forward noising, MLP denoiser, reverse sampling.

Timesteps are 1-based throughout (t = 1..T); array index ``t - 1`` holds step t.
The denoiser keeps its own backward pass so per-sample gradients stay exact
and cheap (every weight gradient of a single sample is a rank-1 outer product).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSS_KINDS = ("mse", "fa")


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def beta_start(self) -> float:
        return float(self.betas[0])

    @property
    def beta_end(self) -> float:
        return float(self.betas[-1])

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if t.size and (t.min() < 1 or t.max() > self.T):
            raise ValueError(f"timestep out of range 1..{self.T}: {t.min()}..{t.max()}")
        return t


def make_schedule(T: int = 500, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    betas[0], betas[-1] = beta_start, beta_end
    alphas = 1.0 - betas
    return DiffusionSchedule(int(T), betas, alphas, np.cumprod(alphas))


@dataclass
class NoisePair:
    z_t: np.ndarray
    eps: np.ndarray
    t: np.ndarray
    label: np.ndarray | None = None


def forward_noise(z0, t, rng: np.random.Generator, schedule: DiffusionSchedule, label=None) -> NoisePair:
    """Closed-form q(z_t | z_0). ``t`` is a scalar or one step per row."""
    z0 = np.atleast_2d(np.asarray(z0))
    t = np.broadcast_to(schedule.check_t(t), (len(z0),)).astype(np.int64)
    eps = rng.standard_normal(z0.shape).astype(z0.dtype, copy=False)
    return NoisePair(noisy(z0, t, eps, schedule), eps, t, label)


def noisy(z0: np.ndarray, t: np.ndarray, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    ab = schedule.alpha_bars[t - 1][:, None]
    return (np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps).astype(z0.dtype, copy=False)


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features [sin(t f_k), cos(t f_k)], f_k = 10000^(-k/half)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(emb), 1))], axis=1)
    return emb


def silu(x):
    return x / (1.0 + np.exp(-x))


def silu_grad(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


@dataclass
class ForwardCache:
    z: np.ndarray
    cond: np.ndarray
    labels: np.ndarray | None
    pre1: np.ndarray
    h1: np.ndarray
    pre2: np.ndarray
    h2: np.ndarray


@dataclass
class Factors:
    """Per-sample gradients in factored form.

    ``outer[name] = (a, g)`` means sample i's gradient of weight ``name`` is
    ``outer(a[i], g[i])``; ``rows[name] = g`` is a per-sample bias gradient;
    ``label_rows = (labels, g)`` scatters row g[i] into label table row labels[i].
    ``dz`` is the gradient with respect to the network input.
    """

    outer: dict
    rows: dict
    label_rows: tuple | None
    dz: np.ndarray


class Denoiser:
    """eps_theta(z_t, t, y): d -> H -> H -> d MLP with SiLU and additive conditioning.

    The conditioning vector (sinusoidal timestep features plus an optional
    learned label embedding) goes through a linear map and is added to the
    first hidden pre-activation.
    """

    def __init__(self, d: int, hidden: int = 512, d_time: int = 64, n_classes: int = 0,
                 seed: int = 0, dtype=np.float32, zero_output: bool = False):
        self.d, self.hidden, self.d_time, self.n_classes = d, hidden, d_time, n_classes
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)

        def dense(n_in, n_out):
            return rng.uniform(-1, 1, (n_in, n_out)) / np.sqrt(n_in)

        p = {
            "net.w_in": dense(d, hidden),
            "net.b_in": np.zeros(hidden),
            "net.w_cond": dense(d_time, hidden),
            "net.w_hid": dense(hidden, hidden),
            "net.b_hid": np.zeros(hidden),
            "net.w_out": np.zeros((hidden, d)) if zero_output else dense(hidden, d),
            "net.b_out": np.zeros(d),
        }
        if n_classes:
            p["net.label_emb"] = rng.standard_normal((n_classes, d_time))
        self.params = {k: v.astype(self.dtype) for k, v in p.items()}

    def conditioning(self, t, labels=None) -> np.ndarray:
        c = timestep_embedding(t, self.d_time)
        if self.n_classes:
            if labels is None:
                raise ValueError("conditional denoiser needs labels")
            labels = np.asarray(labels)
            if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
                raise ValueError(f"label outside 0..{self.n_classes - 1}")
            c = c + self.params["net.label_emb"][labels]
        return c.astype(self.dtype, copy=False)

    def forward(self, z, t, labels=None) -> tuple[np.ndarray, ForwardCache]:
        z = np.asarray(z, dtype=self.dtype)
        if z.ndim != 2 or z.shape[1] != self.d:
            raise ValueError(f"expected input of shape (n, {self.d}), got {z.shape}")
        t = np.broadcast_to(np.asarray(t), (len(z),))
        p = self.params
        cond = self.conditioning(t, labels)
        pre1 = z @ p["net.w_in"] + p["net.b_in"] + cond @ p["net.w_cond"]
        h1 = silu(pre1)
        pre2 = h1 @ p["net.w_hid"] + p["net.b_hid"]
        h2 = silu(pre2)
        out = h2 @ p["net.w_out"] + p["net.b_out"]
        return out, ForwardCache(z, cond, None if labels is None else np.asarray(labels), pre1, h1, pre2, h2)

    def __call__(self, z, t, labels=None) -> np.ndarray:
        return self.forward(z, t, labels)[0]

    def backward(self, cache: ForwardCache, dout: np.ndarray) -> Factors:
        """Per-sample gradients given d(loss_i)/d(out_i) for each row i."""
        p = self.params
        dout = np.asarray(dout, dtype=self.dtype)
        d2 = (dout @ p["net.w_out"].T) * silu_grad(cache.pre2)
        d1 = (d2 @ p["net.w_hid"].T) * silu_grad(cache.pre1)
        outer = {
            "net.w_out": (cache.h2, dout),
            "net.w_hid": (cache.h1, d2),
            "net.w_in": (cache.z, d1),
            "net.w_cond": (cache.cond, d1),
        }
        rows = {"net.b_out": dout, "net.b_hid": d2, "net.b_in": d1}
        label_rows = None
        if self.n_classes:
            label_rows = (cache.labels, d1 @ p["net.w_cond"].T)
        return Factors(outer, rows, label_rows, d1 @ p["net.w_in"].T)


def denoise(net: Denoiser, z_t, t, label=None) -> np.ndarray:
    return net(z_t, t, label)


def loss_mse(eps, eps_hat) -> np.ndarray:
    """Per-sample mean of squared errors over features."""
    r = np.asarray(eps, dtype=np.float64) - np.asarray(eps_hat, dtype=np.float64)
    return np.mean(np.atleast_2d(r) ** 2, axis=1)


def loss_fa(eps, eps_hat) -> np.ndarray:
    """Per-sample sum of squared errors over features."""
    r = np.asarray(eps, dtype=np.float64) - np.asarray(eps_hat, dtype=np.float64)
    return np.sum(np.atleast_2d(r) ** 2, axis=1)


def per_sample_loss(eps, eps_hat, kind: str) -> np.ndarray:
    if kind == "mse":
        return loss_mse(eps, eps_hat)
    if kind == "fa":
        return loss_fa(eps, eps_hat)
    raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")


def loss_grad(eps, eps_hat, kind: str) -> np.ndarray:
    """d(per-sample loss)/d(eps_hat)."""
    r = eps_hat - eps
    if kind == "mse":
        return 2.0 * r / r.shape[1]
    if kind == "fa":
        return 2.0 * r
    raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")


def reverse_step(net, z_t, t: int, rng: np.random.Generator | None, schedule: DiffusionSchedule,
                 label=None, add_noise: bool = True, eps_hat=None) -> np.ndarray:
    """One ancestral step z_t -> z_{t-1} with posterior std sqrt(beta_t).

    ``net`` may be any callable ``(z, t, label) -> eps_hat``; passing ``eps_hat``
    directly skips the call.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"timestep {t} out of range 1..{schedule.T}")
    z_t = np.atleast_2d(z_t)
    if eps_hat is None:
        eps_hat = net(z_t, np.full(len(z_t), t), label)
    beta, alpha, ab = schedule.betas[t - 1], schedule.alphas[t - 1], schedule.alpha_bars[t - 1]
    mean = (z_t - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(alpha)
    if t > 1 and add_noise:
        mean = mean + np.sqrt(beta) * rng.standard_normal(z_t.shape)
    return mean.astype(z_t.dtype, copy=False)


def reverse_chain(net, z_T, schedule: DiffusionSchedule, rng: np.random.Generator | None,
                  label=None, add_noise: bool = True) -> np.ndarray:
    z = z_T
    for t in range(schedule.T, 0, -1):
        z = reverse_step(net, z, t, rng, schedule, label, add_noise)
    return z


def sample(net: Denoiser, n: int, schedule: DiffusionSchedule, codec, labels, rng: np.random.Generator):
    """Draw z_T ~ N(0, I), run the reverse chain and decode.

    ``codec`` is a callable ``(z0, labels) -> records``; ``labels`` gives one
    class index per row (or None for an unconditional model).
    """
    if n == 0:
        return codec(np.zeros((0, net.d), dtype=net.dtype), labels)
    z = rng.standard_normal((n, net.d)).astype(net.dtype)
    z = reverse_chain(net, z, schedule, rng, labels)
    return codec(z, labels)
