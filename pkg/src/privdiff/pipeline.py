"""fit -> train -> generate -> evaluate orchestration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import checkpoint
from .accountant import BudgetExceeded, PrivacyLedger, calibrate_sigma
from .codec import (CATEGORICAL, NUMERIC, EmbeddingSpace, ScalerParams, SchemaError, TableSchema,
                    category_codes, decode, fit_scaler, fit_schema, init_embeddings, label_codes,
                    numeric_matrix, read_csv)
from .config import ConfigError, RunConfig
from .diffusion import Denoiser, DiffusionSchedule, make_schedule, sample
from .dp import (Adam, DpConfig, PerSampleGrads, TrainBatch, clip_coefficients, dp_step,
                 grad_norm_diagnostics, model_params)
from .evaluation import AttackConfig, EvalReport, fidelity, privacy_attacks, utility_phi
from .timesteps import ATSamplerState, UniformSampler, sampler_from_dict

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"


class ClippingViolation(AssertionError):
    pass


def schema_for(cfg: RunConfig, table: pd.DataFrame) -> TableSchema:
    if cfg.schema_path:
        return TableSchema.load(cfg.schema_path)
    kinds = {c: (NUMERIC if c in cfg.numeric_columns else CATEGORICAL) for c in table.columns}
    missing = [c for c in cfg.numeric_columns if c not in table.columns]
    if missing:
        raise SchemaError(f"numeric columns not in data: {missing}")
    return fit_schema(table, kinds, cfg.label_column or None)


def steps_per_epoch(n_rows: int, batch_size: int) -> int:
    return max(1, int(round(n_rows / batch_size)))


@dataclass
class EpochLog:
    epoch: int
    loss: float
    mse: float
    epsilon: float
    steps: int
    mean: float
    var: float
    relvar: float
    skew: float
    frac_clipped: float


@dataclass
class TrainState:
    """Everything needed to continue training bit-exactly."""

    cfg: RunConfig
    schema: TableSchema
    scaler: ScalerParams
    emb: EmbeddingSpace
    net: Denoiser
    adam: Adam
    sampler: object
    ledger: PrivacyLedger | None
    rng: np.random.Generator
    epoch: int = 0
    history: list[EpochLog] = field(default_factory=list)
    stopped_on_budget: bool = False

    @property
    def schedule(self) -> DiffusionSchedule:
        return make_schedule(self.cfg.T, self.cfg.beta_start, self.cfg.beta_end)

    def epsilon(self) -> float:
        return 0.0 if self.ledger is None else self.ledger.epsilon(self.cfg.delta)

    # -- persistence -----------------------------------------------------
    def save(self, path: str | Path) -> None:
        arrays = {"scaler.mean": self.scaler.mean, "scaler.std": self.scaler.std}
        arrays.update({"emb.num": self.emb.numeric_weights})
        arrays.update({f"emb.cat{j}": e for j, e in enumerate(self.emb.category_embeddings)})
        arrays.update(self.net.params)
        for name in sorted(self.adam.m):
            arrays[f"adam.m.{name}"] = self.adam.m[name]
            arrays[f"adam.v.{name}"] = self.adam.v[name]
        if self.ledger is not None:
            arrays["ledger.rdp_total"] = self.ledger.rdp_total
        meta = {
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "schema": self.schema.to_dict(),
            "d_e": self.emb.d_e,
            "net": {"d": self.net.d, "hidden": self.net.hidden, "d_time": self.net.d_time,
                    "n_classes": self.net.n_classes, "dtype": self.net.dtype.name},
            "adam": {"lr": self.adam.lr, "beta1": self.adam.beta1, "beta2": self.adam.beta2,
                     "eps": self.adam.eps, "step_count": self.adam.step_count},
            "sampler": self.sampler.to_dict(),
            "ledger": None if self.ledger is None else self.ledger.to_dict(),
            "rng": self.rng.bit_generator.state,
            "epoch": self.epoch,
            "stopped_on_budget": self.stopped_on_budget,
            "history": [vars(h) for h in self.history],
        }
        checkpoint.save(path, meta, arrays)

    @classmethod
    def load(cls, path: str | Path) -> TrainState:
        meta, arrays = checkpoint.load(path)
        cfg = RunConfig.from_dict(meta["config"])
        schema = TableSchema.from_dict(meta["schema"])
        scaler = ScalerParams(arrays["scaler.mean"], arrays["scaler.std"])
        emb = EmbeddingSpace(meta["d_e"], arrays["emb.num"],
                             [arrays[f"emb.cat{j}"] for j in range(schema.d_cat)])
        n = meta["net"]
        net = Denoiser(n["d"], n["hidden"], n["d_time"], n["n_classes"], dtype=n["dtype"])
        net.params = {k: arrays[k] for k in net.params}
        a = meta["adam"]
        adam = Adam(a["lr"], a["beta1"], a["beta2"], a["eps"])
        adam.step_count = a["step_count"]
        for k, v in arrays.items():
            if k.startswith("adam.m."):
                adam.m[k[len("adam.m."):]] = v
            elif k.startswith("adam.v."):
                adam.v[k[len("adam.v."):]] = v
        ledger = None
        if meta["ledger"] is not None:
            ledger = PrivacyLedger.from_dict(meta["ledger"], arrays["ledger.rdp_total"])
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = meta["rng"]
        state = cls(cfg, schema, scaler, emb, net, adam, sampler_from_dict(meta["sampler"]), ledger, rng,
                    meta["epoch"], [EpochLog(**h) for h in meta["history"]], meta["stopped_on_budget"])
        return state


def init_state(cfg: RunConfig, table: pd.DataFrame, schema: TableSchema | None = None) -> TrainState:
    schema = schema or schema_for(cfg, table)
    dtype = np.dtype(cfg.precision)
    scaler = fit_scaler(table, schema)
    emb = init_embeddings(schema, cfg.d_e, seed=cfg.seed, dtype=dtype)
    net = Denoiser(schema.encoded_width(cfg.d_e), cfg.hidden, cfg.d_time, schema.n_classes,
                   seed=cfg.seed + 1, dtype=dtype)
    n = len(table)
    ledger = None
    if cfg.dp_enabled:
        q = min(1.0, cfg.batch_size / n)
        total_steps = cfg.epochs * steps_per_epoch(n, cfg.batch_size)
        if cfg.epsilon is not None:
            sigma = calibrate_sigma(cfg.epsilon, cfg.delta, q, total_steps)
        else:
            sigma = cfg.sigma
        ledger = PrivacyLedger(sigma, q, max_steps=total_steps)
        log.info("DP-SGD: sigma=%.4f q=%.5f steps=%d", sigma, q, total_steps)
    if cfg.sampler == "at":
        sampler = ATSamplerState(cfg.T, cfg.epochs, cfg.alpha_start, cfg.alpha_end)
    else:
        sampler = UniformSampler(cfg.T)
    return TrainState(cfg, schema, scaler, emb, net, Adam(cfg.lr), sampler, ledger,
                      np.random.default_rng(cfg.seed + 2))


@dataclass
class TrainingData:
    x_scaled: np.ndarray
    codes: np.ndarray
    labels: np.ndarray | None

    def __len__(self):
        return len(self.codes)

    def take(self, idx):
        return (self.x_scaled[idx], self.codes[idx], None if self.labels is None else self.labels[idx])


def training_data(table: pd.DataFrame, state: TrainState) -> TrainingData:
    dt = state.net.dtype
    x = state.scaler.apply(numeric_matrix(table, state.schema)).astype(dt)
    return TrainingData(x, category_codes(table, state.schema), label_codes(table, state.schema))


def run_epoch(state: TrainState, data: TrainingData, on_batch=None) -> EpochLog | None:
    """One pass over the data; returns None if the privacy budget stopped it before any step."""
    cfg, rng = state.cfg, state.rng
    schedule = state.schedule
    state.sampler.set_epoch(state.epoch)
    params = model_params(state.net, state.emb, cfg.train_embeddings)
    n = len(data)
    norms, losses, mses = [], [], []
    steps = 0
    if state.ledger is not None:
        dp = DpConfig(cfg.clip_norm, state.ledger.sigma, state.ledger.q, cfg.delta, state.ledger.max_steps)
        expected_batch = state.ledger.q * n
        batches = (np.flatnonzero(rng.random(n) < dp.sampling_rate) for _ in range(steps_per_epoch(n, cfg.batch_size)))
    else:
        perm = rng.permutation(n)
        batches = (perm[s:s + cfg.batch_size] for s in range(0, n, cfg.batch_size))
    for idx in batches:
        if state.ledger is not None and state.ledger.exhausted:
            state.stopped_on_budget = True
            break
        x, codes, labels = data.take(idx)
        t = state.sampler.sample(len(idx), rng)
        eps = rng.standard_normal((len(idx), state.net.d)).astype(state.net.dtype)
        weights = state.sampler.is_weights(t) if cfg.is_correction else None
        if len(idx):
            g = PerSampleGrads(state.net, state.emb, TrainBatch(x, codes, t, eps, labels, weights),
                               schedule, cfg.loss, cfg.train_embeddings)
            b_norms = g.norms()
            norms.append(b_norms)
            losses.append(g.losses)
            mses.append(g.losses / state.net.d if cfg.loss == "fa" else g.losses)
        if state.ledger is not None:
            if len(idx):
                coef = clip_coefficients(b_norms, cfg.clip_norm)
                clipped = b_norms * coef
                if np.any(clipped > cfg.clip_norm + 1e-9):
                    raise ClippingViolation(f"clipped norm {clipped.max()} exceeds C={cfg.clip_norm}")
                if cfg.check_clipping:
                    check_clipped(g, coef, cfg.clip_norm)
                grad_sum = g.weighted_sum(coef)
            else:
                grad_sum = {k: np.zeros_like(v) for k, v in params.items()}
            dp_step(params, grad_sum, dp, expected_batch, rng, state.adam, state.ledger)
        else:
            state.adam.step(params, g.weighted_sum(np.full(len(idx), 1.0 / len(idx))))
        steps += 1
        if on_batch is not None:
            on_batch(state, g if len(idx) else None)
    if steps == 0:
        return None
    state.epoch += 1
    all_norms = np.concatenate(norms) if norms else np.zeros(0)
    stats = grad_norm_diagnostics(all_norms, cfg.clip_norm) if len(all_norms) >= 2 else None
    entry = EpochLog(
        epoch=state.epoch,
        loss=float(np.concatenate(losses).mean()) if losses else float("nan"),
        mse=float(np.concatenate(mses).mean()) if mses else float("nan"),
        epsilon=state.epsilon(),
        steps=steps,
        **(stats.as_row() if stats else dict(mean=np.nan, var=np.nan, relvar=np.nan, skew=np.nan, frac_clipped=np.nan)),
    )
    state.history.append(entry)
    return entry


def check_clipped(g: PerSampleGrads, coef: np.ndarray, clip_norm: float) -> None:
    """Materialise every clipped per-sample gradient and check its norm."""
    full = g.materialize()
    clipped = full * coef[:, None]
    actual = np.linalg.norm(clipped, axis=1)
    if np.any(actual > clip_norm + 1e-9):
        raise ClippingViolation(f"clipped gradient norm {actual.max()!r} exceeds {clip_norm}")
    untouched = coef == 1.0
    if not np.array_equal(clipped[untouched], full[untouched]):
        raise ClippingViolation("a gradient below the clip norm was modified")


def train(state: TrainState, data: TrainingData, until_epoch: int | None = None, on_epoch=None,
          on_batch=None) -> TrainState:
    """Run epochs until ``until_epoch`` (default: cfg.epochs) or the budget runs out."""
    stop = state.cfg.epochs if until_epoch is None else min(until_epoch, state.cfg.epochs)
    while state.epoch < stop and not state.stopped_on_budget:
        entry = run_epoch(state, data, on_batch)
        if entry is None:
            state.stopped_on_budget = True
            break
        if not np.isfinite(entry.loss):
            raise FloatingPointError(f"non-finite loss at epoch {entry.epoch}: {entry}")
        if on_epoch is not None:
            on_epoch(state, entry)
    if state.stopped_on_budget:
        log.warning("privacy budget exhausted after %d steps; stopping at epoch %d",
                    state.ledger.steps_taken, state.epoch)
    return state


def load_training_table(cfg: RunConfig) -> pd.DataFrame:
    if not cfg.train_csv:
        raise ConfigError("train_csv is required")
    table = read_csv(cfg.train_csv)
    if cfg.subsample_rows and len(table) > cfg.subsample_rows:
        pick = np.sort(np.random.default_rng(cfg.seed).choice(len(table), cfg.subsample_rows, replace=False))
        table = table.iloc[pick].reset_index(drop=True)
    return table


def write_history(history: list[EpochLog], path: str | Path) -> None:
    pd.DataFrame([vars(h) for h in history]).to_csv(path, index=False)


def write_grad_norms(history: list[EpochLog], path: str | Path) -> None:
    cols = ["epoch", "mean", "var", "relvar", "skew", "frac_clipped"]
    pd.DataFrame([vars(h) for h in history], columns=list(vars(history[0])) if history else cols)[cols].to_csv(
        path, index=False)


# -- generation ------------------------------------------------------------

def draw_labels(state_or_schema, n: int, mode: str, rng: np.random.Generator) -> np.ndarray | None:
    schema = state_or_schema.schema if hasattr(state_or_schema, "schema") else state_or_schema
    if schema.label_column is None:
        return None
    classes = schema.labels
    if mode == "uniform":
        return rng.integers(0, len(classes), size=n)
    if mode.startswith("fixed:"):
        name = mode[len("fixed:"):]
        if name not in classes:
            raise SchemaError(f"unknown class {name!r}; expected one of {list(classes)}")
        return np.full(n, classes.index(name), dtype=np.int64)
    if mode.startswith("proportions:"):
        props = read_proportions(mode[len("proportions:"):], classes)
        return rng.choice(len(classes), size=n, p=props)
    raise ConfigError(f"unknown label mode {mode!r}")


def read_proportions(path: str | Path, classes) -> np.ndarray:
    """CSV with columns ``label,proportion``; must sum to 1 within 1e-6."""
    df = read_csv(path)
    if list(df.columns[:2]) != ["label", "proportion"]:
        raise ConfigError("proportions file needs header 'label,proportion'")
    p = np.zeros(len(classes))
    for lab, val in zip(df["label"], df["proportion"]):
        if lab not in classes:
            raise SchemaError(f"unknown class {lab!r} in proportions file")
        p[list(classes).index(lab)] = float(val)
    if abs(p.sum() - 1.0) > 1e-6 or np.any(p < 0):
        raise ConfigError(f"proportions must be nonnegative and sum to 1 (got {p.sum()!r})")
    return p / p.sum()


def generate(state: TrainState, n: int, label_mode: str = "uniform", seed: int | None = None) -> pd.DataFrame:
    rng = np.random.default_rng(state.cfg.seed + 3 if seed is None else seed)
    labels = draw_labels(state, n, label_mode, rng)

    def codec(z0, lab):
        return decode(z0, state.schema, state.scaler, state.emb, lab)

    return sample(state.net, n, state.schedule, codec, labels, rng)


def write_table(table: pd.DataFrame, path: str | Path) -> None:
    table.to_csv(path, index=False, float_format="%.17g")


# -- evaluation ------------------------------------------------------------

def evaluate(real_train: pd.DataFrame, real_test: pd.DataFrame, synth: pd.DataFrame, schema: TableSchema,
             families=("fidelity", "utility", "privacy"), attack_cfg: AttackConfig | None = None,
             seed: int = 0) -> EvalReport:
    for name, t in (("real_train", real_train), ("real_test", real_test), ("synthetic", synth)):
        missing = [c for c in schema.names if c not in t.columns]
        if missing:
            raise SchemaError(f"{name} table is missing columns {missing}")
    report = EvalReport()
    if "fidelity" in families:
        report.fidelity = fidelity(real_train, synth, schema)
    if "utility" in families:
        report.utility = utility_phi(synth, real_test, schema, seed=seed)
    if "privacy" in families:
        report.privacy = privacy_attacks(real_train, synth, real_test, schema, attack_cfg)
    return report
