"""DP-SGD on the joint parameter set (denoiser + embeddings).

Per-sample gradients are kept in factored form (see ``diffusion.Factors``), so
norms and clipped sums never materialise an (n, P) matrix. ``materialize``
exists for checks and diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .accountant import BudgetExceeded, PrivacyLedger
from .codec import EmbeddingSpace, embed_arrays
from .diffusion import Denoiser, DiffusionSchedule, loss_grad, noisy, per_sample_loss


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class DpConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 1.0
    sampling_rate: float = 128 / 30000
    delta: float = 1e-5
    max_steps: int | None = None

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError("clip norm must be > 0")
        if self.noise_multiplier < 0:
            raise ValueError("noise multiplier must be >= 0")
        if not 0 < self.sampling_rate <= 1:
            raise ValueError("sampling rate must be in (0, 1]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")


def model_params(net: Denoiser, emb: EmbeddingSpace, train_embeddings: bool = True) -> dict[str, np.ndarray]:
    """Trainable parameters in canonical order (denoiser first, then embeddings)."""
    params = dict(net.params)
    if train_embeddings:
        params["emb.num"] = emb.numeric_weights
        for j, e in enumerate(emb.category_embeddings):
            params[f"emb.cat{j}"] = e
    return params


@dataclass
class TrainBatch:
    """Raw inputs of one batch; z0 is re-embedded from these so embeddings get gradients."""

    x_scaled: np.ndarray
    codes: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    labels: np.ndarray | None = None
    weights: np.ndarray | None = None  # optional per-sample loss weights

    def __len__(self):
        return len(self.t)


class PerSampleGrads:
    """Exact per-example gradients of the per-sample losses of one batch."""

    def __init__(self, net: Denoiser, emb: EmbeddingSpace, batch: TrainBatch,
                 schedule: DiffusionSchedule, loss_kind: str = "mse", train_embeddings: bool = True):
        self.net, self.emb, self.train_embeddings = net, emb, train_embeddings
        self.batch = batch
        z0 = embed_arrays(batch.x_scaled, batch.codes, emb).astype(net.dtype, copy=False)
        z_t = noisy(z0, batch.t, batch.eps.astype(net.dtype, copy=False), schedule)
        out, cache = net.forward(z_t, batch.t, batch.labels)
        self.losses = per_sample_loss(batch.eps, out, loss_kind)
        bad = np.flatnonzero(~np.isfinite(self.losses))
        if bad.size:
            raise NonFiniteLoss(f"non-finite loss at sample {int(bad[0])}")
        dout = loss_grad(batch.eps.astype(net.dtype), out, loss_kind)
        if batch.weights is not None:
            dout = dout * batch.weights[:, None]
        self.factors = net.backward(cache, dout)
        sab = np.sqrt(schedule.alpha_bars[batch.t - 1]).astype(net.dtype)
        # dL/dz0 split into per-feature slots of width d_e
        self.slots = (self.factors.dz * sab[:, None]).reshape(len(batch), -1, emb.d_e)
        self._norms = None

    def norms(self) -> np.ndarray:
        if self._norms is None:
            f = self.factors
            sq = np.zeros(len(self.batch))
            for a, g in f.outer.values():
                sq += np.einsum("ni,ni->n", a, a, dtype=np.float64) * np.einsum("nj,nj->n", g, g, dtype=np.float64)
            for g in f.rows.values():
                sq += np.einsum("nj,nj->n", g, g, dtype=np.float64)
            if f.label_rows is not None:
                g = f.label_rows[1]
                sq += np.einsum("nj,nj->n", g, g, dtype=np.float64)
            if self.train_embeddings:
                slot_sq = np.einsum("nke,nke->nk", self.slots, self.slots, dtype=np.float64)
                d_num = self.batch.x_scaled.shape[1]
                sq += (self.batch.x_scaled**2 * slot_sq[:, :d_num]).sum(1) + slot_sq[:, d_num:].sum(1)
            self._norms = np.sqrt(sq)
        return self._norms

    def weighted_sum(self, coef: np.ndarray) -> dict[str, np.ndarray]:
        """sum_i coef[i] * g_i, one array per parameter."""
        f, dt = self.factors, self.net.dtype
        coef = np.asarray(coef, dtype=dt)
        out = {}
        for name in self.net.params:
            if name in f.outer:
                a, g = f.outer[name]
                out[name] = a.T @ (g * coef[:, None])
            elif name in f.rows:
                out[name] = coef @ f.rows[name]
            elif name == "net.label_emb":
                labels, g = f.label_rows
                acc = np.zeros_like(self.net.params[name])
                np.add.at(acc, labels, g * coef[:, None])
                out[name] = acc
        if self.train_embeddings:
            d_num = self.batch.x_scaled.shape[1]
            x = self.batch.x_scaled.astype(dt, copy=False)
            out["emb.num"] = np.einsum("n,nj,nje->je", coef, x, self.slots[:, :d_num])
            for j, table in enumerate(self.emb.category_embeddings):
                acc = np.zeros_like(table)
                np.add.at(acc, self.batch.codes[:, j], self.slots[:, d_num + j] * coef[:, None])
                out[f"emb.cat{j}"] = acc
        return out

    def materialize(self) -> np.ndarray:
        """(n, P) matrix of flattened per-sample gradients in ``model_params`` order."""
        rows = []
        for i in range(len(self.batch)):
            e = np.zeros(len(self.batch))
            e[i] = 1.0
            rows.append(flatten(self.weighted_sum(e)))
        return np.stack(rows) if rows else np.zeros((0, 0))


def flatten(grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(g) for g in grads.values()]) if grads else np.zeros(0)


def per_sample_grads(net, emb, batch: TrainBatch, schedule, loss_kind="mse", train_embeddings=True) -> list[np.ndarray]:
    if len(batch) == 0:
        raise ValueError("empty batch")
    return list(PerSampleGrads(net, emb, batch, schedule, loss_kind, train_embeddings).materialize())


def clip_coefficients(norms: np.ndarray, clip_norm: float) -> np.ndarray:
    """min(1, C/||g||); exactly 1 wherever ||g|| <= C."""
    norms = np.asarray(norms, dtype=np.float64)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(norms > clip_norm, clip_norm / np.where(norms > 0, norms, 1.0), 1.0)


def clip(g: np.ndarray, clip_norm: float) -> np.ndarray:
    if not clip_norm > 0:
        raise ValueError("clip norm must be > 0")
    norm = np.linalg.norm(g)
    if norm <= clip_norm:
        return g
    return g * (clip_norm / norm)


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place update of ``params``."""
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.step_count, 1 - b2**self.step_count
        for name, g in grads.items():
            p = params[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


def privatize(grad_sum: dict[str, np.ndarray], cfg: DpConfig, expected_batch: float,
              rng: np.random.Generator) -> dict[str, np.ndarray]:
    """(sum of clipped grads + N(0, (sigma C)^2 I)) / B."""
    std = cfg.noise_multiplier * cfg.clip_norm
    out = {}
    for name, g in grad_sum.items():
        noise = rng.standard_normal(g.shape) * std if std > 0 else 0.0
        out[name] = ((g + noise) / expected_batch).astype(g.dtype, copy=False)
    return out


def dp_step(params: dict[str, np.ndarray], clipped_sum: dict[str, np.ndarray], cfg: DpConfig,
            expected_batch: float, rng: np.random.Generator, adam: Adam,
            ledger: PrivacyLedger | None = None) -> dict[str, np.ndarray]:
    """Noise the clipped-gradient sum, take one Adam step and charge the ledger.

    Returns the privatized gradient that was applied.
    """
    if ledger is not None and ledger.exhausted:
        raise BudgetExceeded(f"privacy ledger exhausted after {ledger.max_steps} steps")
    g_hat = privatize(clipped_sum, cfg, expected_batch, rng)
    adam.step(params, g_hat)
    if ledger is not None:
        ledger.step()
    return g_hat


@dataclass
class GradNormStats:
    mean: float
    var: float
    relvar: float
    skew: float
    frac_clipped: float

    def as_row(self) -> dict:
        return {"mean": self.mean, "var": self.var, "relvar": self.relvar,
                "skew": self.skew, "frac_clipped": self.frac_clipped}


def grad_norm_diagnostics(norms, clip_norm: float = 1.0) -> GradNormStats:
    """Moments of per-sample gradient norms (population formulas)."""
    x = np.asarray(norms, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least 2 gradient norms")
    mean = x.mean()
    var = x.var()
    relvar = var / mean**2 if mean > 0 else 0.0
    skew = float(((x - mean) ** 3).mean() / var**1.5) if var > 0 else 0.0
    return GradNormStats(float(mean), float(var), float(relvar), skew, float((x > clip_norm).mean()))
