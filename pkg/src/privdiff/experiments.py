"""Desk-scale experiment drivers shared by the acceptance suite and scripts/."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import pipeline
from .config import RunConfig
from .evaluation import EvalReport, utility_phi
from .toy import heavy_tailed_schema, heavy_tailed_table, mixture_schema, mixture_table, noise_like


@dataclass
class ToyRun:
    state: pipeline.TrainState
    real: pd.DataFrame
    test: pd.DataFrame
    synth: pd.DataFrame
    report: EvalReport
    noise_phi_logreg: float

    @property
    def omega_total(self) -> float:
        return self.report.fidelity.omega_total

    @property
    def phi(self) -> float:
        return self.report.utility.phi

    @property
    def phi_logreg(self) -> float:
        return self.report.utility.auc["logreg"]


def toy_config(seed: int = 0, epochs: int = 300, hidden: int = 128, **kw) -> RunConfig:
    base = dict(hidden=hidden, epochs=epochs, seed=seed, dp_enabled=False, epsilon=None)
    base.update(kw)
    return RunConfig(**base)


def run_toy(cfg: RunConfig, n_rows: int = 5000, n_test: int = 2000, data_seed: int | None = None) -> ToyRun:
    """Train on the Gaussian-mixture toy, sample as many rows as the training set and score them."""
    data_seed = cfg.seed if data_seed is None else data_seed
    real = mixture_table(n_rows, data_seed)
    test = mixture_table(n_test, 10_000 + data_seed)
    schema = mixture_schema(real)
    state = pipeline.init_state(cfg, real, schema)
    pipeline.train(state, pipeline.training_data(real, state))
    synth = pipeline.generate(state, n_rows)
    report = pipeline.evaluate(real, test, synth, schema, ("fidelity", "utility"), seed=cfg.seed)
    noise = noise_like(real, schema, cfg.seed)
    noise_phi = utility_phi(noise, test, schema, ("logreg",), seed=cfg.seed).auc["logreg"]
    return ToyRun(state, real, test, synth, report, noise_phi)


def marginal_gaps(real: pd.DataFrame, synth: pd.DataFrame, schema) -> dict[str, float]:
    """Largest per-category frequency gap (categoricals) or scaled mean gap (numerics), per column."""
    out = {}
    for c in schema.columns:
        if c.is_numeric:
            r = pd.to_numeric(real[c.name]).to_numpy(np.float64)
            s = pd.to_numeric(synth[c.name]).to_numpy(np.float64)
            out[c.name] = abs(s.mean() - r.mean()) / r.std()
        else:
            pr = real[c.name].astype(str).value_counts(normalize=True)
            ps = synth[c.name].astype(str).value_counts(normalize=True)
            out[c.name] = float((pr.reindex(c.vocab, fill_value=0) - ps.reindex(c.vocab, fill_value=0)).abs().max())
    return out


def grad_norm_relvar(loss: str, seed: int, n_rows: int = 2000, epochs: int = 60, hidden: int = 64,
                     epsilon: float = 1.0) -> float:
    """Mean over epochs of the relative variance of per-sample gradient norms in a DP run."""
    table = heavy_tailed_table(n_rows, seed)
    cfg = RunConfig(hidden=hidden, epochs=epochs, seed=seed, loss=loss, sampler="uniform",
                    dp_enabled=True, epsilon=epsilon)
    state = pipeline.init_state(cfg, table, heavy_tailed_schema(table))
    pipeline.train(state, pipeline.training_data(table, state))
    return float(np.mean([h.relvar for h in state.history]))
