"""Simplified singling-out, linkability and inference attacks on synthetic data.

Each attack is run twice: against records of the training table and against a
disjoint holdout of equal size. The reported risk is the excess success over
that baseline, ``(r_train - r_base) / (1 - r_base)`` clamped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..codec import TableSchema


@dataclass
class AttackConfig:
    n_attacks: int = 500
    seed: int = 0
    interval_tol: float = 1e-3  # half-width of singling-out intervals, fraction of range
    secret_column: str | None = None
    numeric_match_tol: float = 0.05  # inference hit if |guess - truth| <= tol * range
    link_split: tuple[list[str], list[str]] | None = None


@dataclass
class AttackResult:
    successes: int
    baseline_successes: int
    trials: int

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    @property
    def baseline_rate(self) -> float:
        return self.baseline_successes / self.trials if self.trials else 0.0

    @property
    def risk(self) -> float:
        base = self.baseline_rate
        if base >= 1.0:
            return 0.0
        return float(np.clip((self.rate - base) / (1.0 - base), 0.0, 1.0))

    @property
    def stderr(self) -> float:
        n = max(self.trials, 1)
        r, b = self.rate, self.baseline_rate
        return float(np.sqrt(r * (1 - r) / n + b * (1 - b) / n))


@dataclass
class PrivacyRiskReport:
    singling_out: AttackResult | None
    linkability: AttackResult | None
    inference: AttackResult | None

    @property
    def sor(self) -> float:
        return self.singling_out.risk

    @property
    def lr(self) -> float:
        return self.linkability.risk

    @property
    def ir(self) -> float:
        return self.inference.risk


class GowerSpace:
    """Gower distance over a column subset: |dx|/range for numerics, mismatch for categories."""

    def __init__(self, schema: TableSchema, columns: list[str], reference: pd.DataFrame):
        self.schema = schema
        self.columns = columns
        self.ranges = {}
        for name in columns:
            if schema.column(name).is_numeric:
                x = pd.to_numeric(reference[name]).to_numpy(np.float64)
                r = x.max() - x.min()
                self.ranges[name] = r if r > 0 else 1.0

    def _arrays(self, table: pd.DataFrame):
        num, cat = [], []
        for name in self.columns:
            if name in self.ranges:
                num.append(pd.to_numeric(table[name]).to_numpy(np.float64) / self.ranges[name])
            else:
                cat.append(table[name].astype(str).to_numpy())
        n = len(table)
        num = np.column_stack(num) if num else np.zeros((n, 0))
        cat = np.column_stack(cat) if cat else np.zeros((n, 0), dtype=object)
        return num, cat

    def nearest(self, queries: pd.DataFrame, pool: pd.DataFrame, chunk: int = 256) -> np.ndarray:
        """Index into ``pool`` of each query's nearest neighbour (first index on ties)."""
        qn, qc = self._arrays(queries)
        pn, pc = self._arrays(pool)
        k = len(self.columns)
        out = np.empty(len(queries), dtype=np.int64)
        for s in range(0, len(queries), chunk):
            d = np.abs(qn[s:s + chunk, None, :] - pn[None, :, :]).sum(-1)
            if qc.shape[1]:
                d = d + (qc[s:s + chunk, None, :] != pc[None, :, :]).sum(-1)
            out[s:s + chunk] = (d / k).argmin(axis=1)
        return out


def _targets(real_train, holdout, n, rng):
    m = min(len(holdout), len(real_train))
    if m == 0:
        raise ValueError("holdout must be nonempty")
    train = real_train.iloc[rng.choice(len(real_train), m, replace=False)].reset_index(drop=True)
    hold = holdout.iloc[rng.choice(len(holdout), m, replace=False)].reset_index(drop=True)
    k = min(n, m)
    pick_t = rng.choice(m, k, replace=False)
    pick_h = rng.choice(m, k, replace=False)
    return train, hold, pick_t, pick_h


def singling_out(real_train, synth, holdout, schema: TableSchema, cfg: AttackConfig) -> AttackResult:
    """Predicates built from synthetic values; success = exactly one match in the target table."""
    rng = np.random.default_rng(cfg.seed)
    train, hold, _, _ = _targets(real_train, holdout, cfg.n_attacks, rng)
    cols = schema.columns
    hits = base = 0
    for _ in range(cfg.n_attacks):
        c = cols[rng.integers(len(cols))]
        value = synth[c.name].iloc[rng.integers(len(synth))]
        if c.is_numeric:
            x = pd.to_numeric(real_train[c.name]).to_numpy(np.float64)
            h = cfg.interval_tol * max(x.max() - x.min(), 1e-12)
            v = float(value)

            def count(table):
                y = pd.to_numeric(table[c.name]).to_numpy(np.float64)
                return int((np.abs(y - v) <= h).sum())
        else:
            def count(table):
                return int((table[c.name].astype(str).to_numpy() == str(value)).sum())
        hits += count(train) == 1
        base += count(hold) == 1
    return AttackResult(hits, base, cfg.n_attacks)


def _default_split(schema: TableSchema) -> tuple[list[str], list[str]]:
    names = schema.names
    return names[0::2], names[1::2]


def linkability(real_train, synth, holdout, schema: TableSchema, cfg: AttackConfig) -> AttackResult:
    """Per synthetic record: do its nearest real neighbours on the two attribute halves coincide?"""
    rng = np.random.default_rng(cfg.seed + 1)
    train, hold, _, _ = _targets(real_train, holdout, cfg.n_attacks, rng)
    left, right = cfg.link_split or _default_split(schema)
    if not left or not right:
        raise ValueError("linkability needs two nonempty attribute halves")
    ref = pd.concat([real_train, synth], ignore_index=True)
    ga, gb = GowerSpace(schema, left, ref), GowerSpace(schema, right, ref)
    k = min(cfg.n_attacks, len(synth))
    probes = synth.iloc[rng.choice(len(synth), k, replace=False)]

    def run(pool):
        return int((ga.nearest(probes, pool) == gb.nearest(probes, pool)).sum())

    return AttackResult(run(train), run(hold), k)


def inference(real_train, synth, holdout, schema: TableSchema, cfg: AttackConfig) -> AttackResult:
    """Guess a secret column from the nearest synthetic record on the remaining columns."""
    secret = cfg.secret_column or schema.label_column or schema.names[-1]
    if secret not in schema.names:
        raise ValueError(f"secret column {secret!r} missing")
    rng = np.random.default_rng(cfg.seed + 2)
    train, hold, pick_t, pick_h = _targets(real_train, holdout, cfg.n_attacks, rng)
    aux = [n for n in schema.names if n != secret]
    ref = pd.concat([real_train, synth], ignore_index=True)
    g = GowerSpace(schema, aux, ref)
    col = schema.column(secret)
    if col.is_numeric:
        x = pd.to_numeric(ref[secret]).to_numpy(np.float64)
        tol = cfg.numeric_match_tol * max(x.max() - x.min(), 1e-12)

    def run(targets):
        guess = synth[secret].to_numpy()[g.nearest(targets, synth)]
        truth = targets[secret].to_numpy()
        if col.is_numeric:
            return int((np.abs(guess.astype(float) - truth.astype(float)) <= tol).sum())
        return int((guess.astype(str) == truth.astype(str)).sum())

    return AttackResult(run(train.iloc[pick_t]), run(hold.iloc[pick_h]), len(pick_t))


def privacy_attacks(real_train, synth, holdout, schema: TableSchema, cfg: AttackConfig | None = None,
                    which=("sor", "lr", "ir")) -> PrivacyRiskReport:
    cfg = cfg or AttackConfig()
    if len(holdout) == 0:
        raise ValueError("holdout must be nonempty")
    return PrivacyRiskReport(
        singling_out(real_train, synth, holdout, schema, cfg) if "sor" in which else None,
        linkability(real_train, synth, holdout, schema, cfg) if "lr" in which else None,
        inference(real_train, synth, holdout, schema, cfg) if "ir" in which else None,
    )
