"""Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.

Per-step RDP follows Mironov, Talwar & Zhang (2019): integer orders use the
binomial expansion, fractional orders the two-sided erfc series. Conversion to
(eps, delta) uses the tighter bound of Balle et al. (2020),
``eps = rdp + log1p(-1/a) - (log(delta) + log(a)) / (a - 1)``.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

log = logging.getLogger(__name__)

# dense grid up to 64 plus a sparse tail for very small budgets
DEFAULT_ORDERS = tuple(np.arange(1.25, 64.0 + 1e-9, 0.25).round(2)) + (72.0, 80.0, 96.0, 128.0, 192.0, 256.0)

SIGMA_BOUNDS = (0.3, 100.0)


class BudgetExceeded(RuntimeError):
    pass


class CalibrationError(ValueError):
    pass


def _log_add(a: float, b: float) -> float:
    hi, lo = max(a, b), min(a, b)
    if hi == -np.inf:
        return hi
    return hi + math.log1p(math.exp(lo - hi))


def _log_sub(a: float, b: float) -> float:
    if b == -np.inf:
        return a
    if a == b:
        return -np.inf
    if b > a:
        raise ValueError("log of a negative number")
    return a + math.log1p(-math.exp(b - a))


def _log_erfc(x: float) -> float:
    # erfc(x) = 2 * Phi(-x * sqrt(2))
    return math.log(2.0) + float(special.log_ndtr(-x * math.sqrt(2.0)))


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    log_a = -np.inf
    for k in range(alpha + 1):
        term = (math.log(special.binom(alpha, k)) + k * math.log(q) + (alpha - k) * math.log1p(-q)
                + (k * k - k) / (2.0 * sigma**2))
        log_a = _log_add(log_a, term)
    return log_a


def _log_a_frac(q: float, sigma: float, alpha: float) -> float:
    log_a0 = log_a1 = -np.inf
    z0 = sigma**2 * math.log(1.0 / q - 1.0) + 0.5
    i = 0
    while True:
        coef = special.binom(alpha, i)
        log_coef = math.log(abs(coef))
        j = alpha - i
        log_t0 = log_coef + i * math.log(q) + j * math.log1p(-q)
        log_t1 = log_coef + j * math.log(q) + i * math.log1p(-q)
        log_e0 = math.log(0.5) + _log_erfc((i - z0) / (math.sqrt(2.0) * sigma))
        log_e1 = math.log(0.5) + _log_erfc((z0 - j) / (math.sqrt(2.0) * sigma))
        log_s0 = log_t0 + (i * i - i) / (2.0 * sigma**2) + log_e0
        log_s1 = log_t1 + (j * j - j) / (2.0 * sigma**2) + log_e1
        if coef > 0:
            log_a0, log_a1 = _log_add(log_a0, log_s0), _log_add(log_a1, log_s1)
        else:
            log_a0, log_a1 = _log_sub(log_a0, log_s0), _log_sub(log_a1, log_s1)
        i += 1
        # leading terms can be tiny too when q is large, so only stop in the tail
        if i > alpha and max(log_s0, log_s1) < -30:
            break
    return _log_add(log_a0, log_a1)


def rdp_subsampled_gaussian(q: float, sigma: float, order: float) -> float:
    """RDP of one step of the sampled Gaussian mechanism at a single order."""
    if not 0 < q <= 1:
        raise ValueError(f"sampling rate must be in (0, 1], got {q}")
    if order <= 1:
        raise ValueError("orders must exceed 1")
    if sigma == 0:
        return np.inf
    if q == 1.0:
        return order / (2.0 * sigma**2)
    if float(order).is_integer():
        log_a = _log_a_int(q, sigma, int(order))
    else:
        log_a = _log_a_frac(q, sigma, float(order))
    return log_a / (order - 1)


@functools.lru_cache(maxsize=4096)
def _rdp_curve(q: float, sigma: float, orders: tuple) -> tuple:
    return tuple(rdp_subsampled_gaussian(q, sigma, a) for a in orders)


def rdp_per_step(q: float, sigma: float, orders=DEFAULT_ORDERS) -> np.ndarray:
    return np.array(_rdp_curve(float(q), float(sigma), tuple(float(a) for a in orders)))


def rdp_to_epsilon(orders, rdp, delta: float) -> tuple[float, float]:
    """Best (eps, order) over the grid for a total RDP curve."""
    orders = np.asarray(orders, dtype=np.float64)
    rdp = np.asarray(rdp, dtype=np.float64)
    eps = rdp + np.log1p(-1.0 / orders) - (math.log(delta) + np.log(orders)) / (orders - 1)
    eps = np.where(np.isnan(eps), np.inf, eps)
    i = int(np.argmin(eps))
    return max(0.0, float(eps[i])), float(orders[i])


def compute_epsilon(sigma: float, q: float, steps: int, delta: float, orders=DEFAULT_ORDERS) -> float:
    if steps == 0:
        return 0.0
    return rdp_to_epsilon(orders, steps * rdp_per_step(q, sigma, orders), delta)[0]


@dataclass
class PrivacyLedger:
    """Running RDP total for a fixed (sigma, q) pair."""

    sigma: float
    q: float
    max_steps: int | None = None
    orders: tuple = DEFAULT_ORDERS
    steps_taken: int = 0
    rdp_step: np.ndarray = field(default=None, repr=False)
    rdp_total: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 < self.q <= 1:
            raise ValueError(f"sampling rate must be in (0, 1], got {self.q}")
        if self.sigma < 0:
            raise ValueError("noise multiplier must be >= 0")
        if self.rdp_step is None:
            self.rdp_step = rdp_per_step(self.q, self.sigma, self.orders)
        if self.rdp_total is None:
            self.rdp_total = np.zeros(len(self.orders))

    @property
    def exhausted(self) -> bool:
        return self.max_steps is not None and self.steps_taken >= self.max_steps

    def step(self) -> None:
        if self.exhausted:
            raise BudgetExceeded(f"privacy ledger exhausted after {self.max_steps} steps")
        self.steps_taken += 1
        self.rdp_total = self.rdp_total + self.rdp_step

    def epsilon(self, delta: float) -> float:
        if self.steps_taken == 0:
            return 0.0
        return rdp_to_epsilon(self.orders, self.rdp_total, delta)[0]

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "q": self.q, "max_steps": self.max_steps,
                "orders": list(self.orders), "steps_taken": self.steps_taken}

    @classmethod
    def from_dict(cls, d: dict, rdp_total=None) -> PrivacyLedger:
        led = cls(d["sigma"], d["q"], d["max_steps"], tuple(d["orders"]), d["steps_taken"])
        led.rdp_total = led.steps_taken * led.rdp_step if rdp_total is None else np.asarray(rdp_total)
        return led


def epsilon_spent(ledger: PrivacyLedger, delta: float) -> float:
    return ledger.epsilon(delta)


def calibrate_sigma(eps_target: float, delta: float, q: float, steps: int,
                    bounds=SIGMA_BOUNDS, rtol: float = 1e-3, orders=DEFAULT_ORDERS) -> float:
    """Smallest noise multiplier (to within ``rtol`` in eps) whose eps stays <= target."""
    lo, hi = bounds
    if compute_epsilon(hi, q, steps, delta, orders) > eps_target:
        raise CalibrationError(f"eps={eps_target} unreachable even with sigma={hi}")
    eps_lo = compute_epsilon(lo, q, steps, delta, orders)
    if eps_lo <= eps_target:
        log.warning("budget eps=%g is loose: sigma pinned at lower bound %g (eps=%.4g)", eps_target, lo, eps_lo)
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        eps = compute_epsilon(mid, q, steps, delta, orders)
        if eps > eps_target:
            lo = mid
        else:
            hi = mid
            if eps >= eps_target * (1 - rtol):
                break
        if hi - lo < 1e-10:
            break
    return hi

