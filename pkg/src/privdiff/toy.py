"""Small synthetic tables used by tests and experiment scripts."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .codec import CATEGORICAL, NUMERIC, fit_schema


def mixture_table(n: int, seed: int = 0) -> pd.DataFrame:
    """Two numerics and one categorical from a 2-component Gaussian mixture, plus a binary label.

    The component is the label; ``cat`` and both numerics depend on it.
    """
    rng = np.random.default_rng(seed)
    y = rng.random(n) < 0.5
    mu = np.where(y[:, None], [0.6, -0.4], [-0.4, 0.4])
    cov = np.array([[1.0, 0.6], [0.6, 1.0]])
    x = mu + rng.multivariate_normal([0, 0], cov, size=n)
    p_cat = np.where(y[:, None], [0.45, 0.3, 0.25], [0.25, 0.3, 0.45])
    u = rng.random(n)[:, None]
    cat = np.array(["a", "b", "c"])[(u > np.cumsum(p_cat, axis=1)).sum(1)]
    return pd.DataFrame({"x1": x[:, 0], "x2": x[:, 1], "cat": cat, "label": np.where(y, "pos", "neg")})


MIXTURE_KINDS = {"x1": NUMERIC, "x2": NUMERIC, "cat": CATEGORICAL, "label": CATEGORICAL}


def mixture_schema(table: pd.DataFrame):
    return fit_schema(table, MIXTURE_KINDS, "label")


def heavy_tailed_table(n: int, seed: int = 0) -> pd.DataFrame:
    """Mixed table with one heavy-tailed numeric column (Student t, 2 dof)."""
    rng = np.random.default_rng(seed)
    y = rng.random(n) < 0.5
    return pd.DataFrame({
        "heavy": rng.standard_t(2.0, size=n) + 2.0 * y,
        "gauss": rng.standard_normal(n) - y,
        "c1": rng.choice(["u", "v", "w"], size=n),
        "c2": np.where(rng.random(n) < 0.7, np.where(y, "p", "q"), "r"),
        "c3": rng.choice(["k", "l"], size=n),
        "label": np.where(y, "pos", "neg"),
    })


HEAVY_KINDS = {"heavy": NUMERIC, "gauss": NUMERIC, "c1": CATEGORICAL, "c2": CATEGORICAL,
               "c3": CATEGORICAL, "label": CATEGORICAL}


def heavy_tailed_schema(table: pd.DataFrame):
    return fit_schema(table, HEAVY_KINDS, "label")


def noise_like(table: pd.DataFrame, schema, seed: int = 0) -> pd.DataFrame:
    """Independent uniform noise over each column's observed range / vocab."""
    rng = np.random.default_rng(seed)
    out = {}
    for c in schema.columns:
        if c.is_numeric:
            x = pd.to_numeric(table[c.name]).to_numpy(np.float64)
            out[c.name] = rng.uniform(x.min(), x.max(), size=len(table))
        else:
            out[c.name] = rng.choice(np.asarray(c.vocab, dtype=object), size=len(table))
    return pd.DataFrame(out, columns=schema.names)
