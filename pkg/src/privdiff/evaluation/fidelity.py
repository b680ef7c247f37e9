"""Column- and pair-level similarity between a real and a synthetic table."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial.distance import jensenshannon
from scipy.stats import wasserstein_distance

from ..codec import NUMERIC, TableSchema

log = logging.getLogger(__name__)


def _as_float(col) -> np.ndarray:
    return pd.to_numeric(pd.Series(col), errors="raise").to_numpy(dtype=np.float64)


def js_divergence(real_col, synth_col) -> float:
    """Base-2 Jensen-Shannon divergence of the empirical category distributions."""
    real = pd.Series(real_col).astype(str)
    synth = pd.Series(synth_col).astype(str)
    support = sorted(set(real) | set(synth))
    p = real.value_counts(normalize=True).reindex(support, fill_value=0.0).to_numpy()
    q = synth.value_counts(normalize=True).reindex(support, fill_value=0.0).to_numpy()
    return float(jensenshannon(p, q, base=2) ** 2)


def fidelity_column(real_col, synth_col, kind: str) -> float:
    """1 - W1 on [0,1]-normalised values (numeric) or 1 - JS (categorical)."""
    if len(real_col) == 0 or len(synth_col) == 0:
        raise ValueError("columns must be nonempty")
    if kind == NUMERIC:
        real, synth = _as_float(real_col), _as_float(synth_col)
        lo, hi = real.min(), real.max()
        if hi == lo:
            raise ValueError("real numeric column has zero range")
        w = wasserstein_distance((real - lo) / (hi - lo), (synth - lo) / (hi - lo))
        return float(np.clip(1.0 - w, 0.0, 1.0))
    return float(np.clip(1.0 - js_divergence(real_col, synth_col), 0.0, 1.0))


def entropy(x) -> float:
    p = pd.Series(x).astype(str).value_counts(normalize=True).to_numpy()
    return float(-(p * np.log(p)).sum())


def conditional_entropy(b, a) -> float:
    """H(b | a)."""
    df = pd.DataFrame({"a": pd.Series(a).astype(str).to_numpy(), "b": pd.Series(b).astype(str).to_numpy()})
    n = len(df)
    h = 0.0
    for _, grp in df.groupby("a", sort=False):
        h += len(grp) / n * entropy(grp["b"])
    return h


def theils_u(a, b) -> float:
    """U(a -> b) = (H(b) - H(b|a)) / H(b), with 0/0 := 0."""
    hb = entropy(b)
    if hb == 0:
        return 0.0
    return float(np.clip((hb - conditional_entropy(b, a)) / hb, 0.0, 1.0))


def pearson(x, y) -> float | None:
    x, y = _as_float(x), _as_float(y)
    if x.std() == 0 or y.std() == 0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def fidelity_pair(real_a, real_b, synth_a, synth_b, kind: str) -> float | None:
    """Score one like-kind attribute pair; None when the pair is degenerate."""
    if kind == NUMERIC:
        r, s = pearson(real_a, real_b), pearson(synth_a, synth_b)
        if r is None or s is None:
            return None
        return float(np.clip(1.0 - abs(r - s) / 2.0, 0.0, 1.0))
    return float(np.clip(1.0 - abs(theils_u(real_a, real_b) - theils_u(synth_a, synth_b)), 0.0, 1.0))


@dataclass
class FidelityReport:
    columns: dict[str, float]
    pairs: dict[tuple[str, str], float] = field(default_factory=dict)

    @property
    def omega_col(self) -> float:
        return float(np.mean(list(self.columns.values())))

    @property
    def omega_row(self) -> float:
        # no scorable pairs: fall back to the column score so the total stays defined
        return float(np.mean(list(self.pairs.values()))) if self.pairs else self.omega_col

    @property
    def omega_total(self) -> float:
        return (self.omega_col + self.omega_row) / 2.0


def fidelity_row(real: pd.DataFrame, synth: pd.DataFrame, schema: TableSchema) -> dict[tuple[str, str], float]:
    if len(real) < 2 or len(synth) < 2:
        raise ValueError("row fidelity needs at least 2 rows per table")
    out = {}
    for a, b in itertools.combinations(schema.columns, 2):
        if a.kind != b.kind:
            continue
        score = fidelity_pair(real[a.name], real[b.name], synth[a.name], synth[b.name], a.kind)
        if score is None:
            warnings.warn(f"skipping pair ({a.name}, {b.name}): constant column, correlation undefined")
            continue
        out[(a.name, b.name)] = score
    return out


def fidelity(real: pd.DataFrame, synth: pd.DataFrame, schema: TableSchema) -> FidelityReport:
    cols = {c.name: fidelity_column(real[c.name], synth[c.name], c.kind) for c in schema.columns}
    return FidelityReport(cols, fidelity_row(real, synth, schema))
