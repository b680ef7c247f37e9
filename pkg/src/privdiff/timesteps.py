"""Timestep samplers: uniform and the annealed power law P_k(t) ~ t^alpha_k."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codec import EmbeddingSpace
from .diffusion import Denoiser, DiffusionSchedule
from .dp import PerSampleGrads, TrainBatch


def alpha_at(k: float, K: int, alpha_start: float = 3.0, alpha_end: float = -1.0) -> float:
    if K <= 0:
        raise ValueError("K must be >= 1")
    if not 0 <= k <= K:
        raise ValueError(f"epoch {k} outside 0..{K}")
    if k == K:
        return float(alpha_end)
    return alpha_start + (k / K) * (alpha_end - alpha_start)


def timestep_pmf(alpha: float, T: int) -> np.ndarray:
    """P(t) = t^alpha / sum_s s^alpha over t = 1..T (index t-1)."""
    if not math.isfinite(alpha):
        raise ValueError(f"alpha must be finite, got {alpha}")
    if T < 1:
        raise ValueError("T must be >= 1")
    if alpha == 0:
        return np.full(T, 1.0 / T)
    # work in logs so large |alpha| does not overflow
    logw = alpha * np.log(np.arange(1, T + 1, dtype=np.float64))
    w = np.exp(logw - logw.max())
    return w / w.sum()


@dataclass
class ATSamplerState:
    T: int
    K: int
    alpha_start: float = 3.0
    alpha_end: float = -1.0
    k: int = 0
    pmf: np.ndarray = field(default=None, repr=False)
    cdf: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.set_epoch(self.k)

    @property
    def alpha(self) -> float:
        return alpha_at(self.k, self.K, self.alpha_start, self.alpha_end)

    def set_epoch(self, k: int) -> None:
        """Freeze the pmf for epoch k (k completed epochs out of K)."""
        self.k = int(min(max(k, 0), self.K))
        self.pmf = timestep_pmf(self.alpha, self.T)
        self.cdf = np.cumsum(self.pmf)
        self.cdf[-1] = 1.0

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        u = rng.random(n)
        return np.searchsorted(self.cdf, u, side="right").clip(max=self.T - 1) + 1

    def is_weights(self, t: np.ndarray) -> np.ndarray:
        """Importance-sampling correction u(t)/P_k(t)."""
        return (1.0 / self.T) / self.pmf[np.asarray(t) - 1]

    def to_dict(self) -> dict:
        return {"kind": "at", "T": self.T, "K": self.K, "alpha_start": self.alpha_start,
                "alpha_end": self.alpha_end, "k": self.k}


@dataclass
class UniformSampler:
    T: int
    k: int = 0

    @property
    def pmf(self) -> np.ndarray:
        return np.full(self.T, 1.0 / self.T)

    def set_epoch(self, k: int) -> None:
        self.k = int(k)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(1, self.T + 1, size=n)

    def is_weights(self, t: np.ndarray) -> np.ndarray:
        return np.ones(len(t))

    def to_dict(self) -> dict:
        return {"kind": "uniform", "T": self.T, "k": self.k}


def sampler_from_dict(d: dict):
    if d["kind"] == "uniform":
        return UniformSampler(d["T"], d["k"])
    return ATSamplerState(d["T"], d["K"], d["alpha_start"], d["alpha_end"], d["k"])


def sample_timesteps(state, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    return state.sample(batch_size, rng)


def measure_dp_signal(net: Denoiser, emb: EmbeddingSpace, x_scaled: np.ndarray, codes: np.ndarray,
                      schedule: DiffusionSchedule, clip_norm: float, t_grid, rng: np.random.Generator,
                      labels=None, loss_kind: str = "mse", train_embeddings: bool = False) -> np.ndarray:
    """s(t) = mean_i min(||g_{i,t}||, C) for each t in ``t_grid``.

    Diagnostic only: the gradients are discarded, parameters are untouched.
    """
    if len(codes) == 0 and len(x_scaled) == 0:
        raise ValueError("empty data sample")
    n = len(x_scaled)
    out = []
    for t in t_grid:
        tt = np.full(n, int(t))
        schedule.check_t(tt)
        eps = rng.standard_normal((n, net.d))
        g = PerSampleGrads(net, emb, TrainBatch(x_scaled, codes, tt, eps, labels), schedule, loss_kind,
                           train_embeddings)
        out.append(np.minimum(g.norms(), clip_norm).mean())
    return np.array(out)
