"""Command line entry point: fit-schema, calibrate, train, generate, evaluate, diagnose.

Exit codes: 0 ok, 2 config error, 3 privacy-budget error, 4 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import pipeline
from .accountant import BudgetExceeded, CalibrationError, SIGMA_BOUNDS, calibrate_sigma, compute_epsilon
from .checkpoint import CheckpointError
from .codec import (CATEGORICAL, NUMERIC, CodecError, SchemaError, TableSchema, category_codes, fit_schema,
                    label_codes, numeric_matrix, read_csv)
from .config import HELP, ConfigError, RunConfig, dump_config, load_config, parse_value
from .dp import PerSampleGrads, TrainBatch, grad_norm_diagnostics
from .evaluation import AttackConfig, UtilityError
from .timesteps import alpha_at, measure_dp_signal, timestep_pmf

log = logging.getLogger("privdiff")

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_DATA = 0, 2, 3, 4


def _split(s: str | None) -> list[str]:
    return [x.strip() for x in (s or "").split(",") if x.strip()]


def cmd_fit_schema(args) -> int:
    table = read_csv(args.data)
    numeric = _split(args.numeric)
    kinds = {c: (NUMERIC if c in numeric else CATEGORICAL) for c in table.columns}
    missing = [c for c in numeric if c not in table.columns]
    if missing:
        raise SchemaError(f"numeric columns not in data: {missing}")
    schema = fit_schema(table, kinds, args.label)
    schema.save(args.out)
    print(f"wrote {args.out}: d_num={schema.d_num} d_cat={schema.d_cat} label={schema.label_column}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    q = min(1.0, args.batch / args.rows)
    steps = args.epochs * pipeline.steps_per_epoch(args.rows, args.batch)
    sigma = calibrate_sigma(args.epsilon, args.delta, q, steps)
    eps = compute_epsilon(sigma, q, steps, args.delta)
    if sigma <= SIGMA_BOUNDS[0]:
        print(f"warning: budget is loose; sigma pinned at the lower search bound {SIGMA_BOUNDS[0]}", file=sys.stderr)
    print(f"sigma={sigma!r}")
    print(f"steps={steps} q={q!r} epsilon={eps!r} delta={args.delta!r}")
    return EXIT_OK


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            overrides[f.name] = parse_value(f.name, raw)
    if args.config:
        return load_config(args.config, **overrides)
    return RunConfig.from_dict(overrides)


def cmd_train(args) -> int:
    out = None
    if args.resume:
        state = pipeline.TrainState.load(args.resume)
        cfg = state.cfg
        out = Path(args.output_dir or cfg.output_dir)
        table = pipeline.load_training_table(cfg)
    else:
        cfg = _config_from_args(args)
        out = Path(cfg.output_dir)
        table = pipeline.load_training_table(cfg)
        state = pipeline.init_state(cfg, table)
    out.mkdir(parents=True, exist_ok=True)
    data = pipeline.training_data(table, state)

    def on_epoch(st, entry):
        log.info("epoch %d loss=%.5f eps=%.4f relvar=%.4f clipped=%.3f",
                 entry.epoch, entry.loss, entry.epsilon, entry.relvar, entry.frac_clipped)

    try:
        pipeline.train(state, data, until_epoch=args.until_epoch, on_epoch=on_epoch)
    finally:
        state.save(out / pipeline.CHECKPOINT_NAME)
        state.schema.save(out / "schema.json")
        pipeline.write_history(state.history, out / "train_log.csv")
        pipeline.write_grad_norms(state.history, out / "grad_norms.csv")
        (out / "config.ini").write_text(dump_config(state.cfg), encoding="utf-8")
    print(f"epochs={state.epoch} epsilon={state.epsilon()!r} delta={cfg.delta!r} "
          f"budget_stop={state.stopped_on_budget} checkpoint={out / pipeline.CHECKPOINT_NAME}")
    return EXIT_OK


def cmd_generate(args) -> int:
    state = pipeline.TrainState.load(args.checkpoint)
    synth = pipeline.generate(state, args.n, args.label_mode, args.seed)
    pipeline.write_table(synth, args.out)
    print(f"wrote {len(synth)} rows to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    schema = TableSchema.load(args.schema)
    families = _split(args.families)
    unknown = set(families) - {"fidelity", "utility", "privacy"}
    if unknown:
        raise ConfigError(f"unknown metric families {sorted(unknown)}")
    if "utility" in families and schema.label_column is None:
        raise UtilityError("utility requested but the schema has no label column")
    real_train, real_test, synth = read_csv(args.real_train), read_csv(args.real_test), read_csv(args.synth)
    attack = AttackConfig(n_attacks=args.n_attacks, seed=args.seed, secret_column=args.secret_column)
    report = pipeline.evaluate(real_train, real_test, synth, schema, families, attack, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    text = report.summary()
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    state = pipeline.TrainState.load(args.checkpoint)
    cfg = state.cfg
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    # AT pmf per epoch (one row per epoch, columns t=1..T)
    K = cfg.epochs
    pmf = np.stack([timestep_pmf(alpha_at(k, K, cfg.alpha_start, cfg.alpha_end), cfg.T) for k in range(K + 1)])
    df = pd.DataFrame(pmf, columns=[f"t{t}" for t in range(1, cfg.T + 1)])
    df.insert(0, "alpha", [alpha_at(k, K, cfg.alpha_start, cfg.alpha_end) for k in range(K + 1)])
    df.insert(0, "epoch", range(K + 1))
    df.to_csv(out / "at_pmf.csv", index=False)

    if args.data:
        table = read_csv(args.data)
        if args.rows and len(table) > args.rows:
            table = table.iloc[rng.choice(len(table), args.rows, replace=False)].reset_index(drop=True)
        x = state.scaler.apply(numeric_matrix(table, state.schema)).astype(state.net.dtype)
        codes = category_codes(table, state.schema)
        labels = label_codes(table, state.schema)
        rows = []
        t = rng.integers(1, cfg.T + 1, size=len(table))
        eps = rng.standard_normal((len(table), state.net.d))
        for kind in ("mse", "fa"):
            g = PerSampleGrads(state.net, state.emb, TrainBatch(x, codes, t, eps, labels), state.schedule, kind,
                               cfg.train_embeddings)
            rows.append({"loss": kind, **grad_norm_diagnostics(g.norms(), cfg.clip_norm).as_row()})
        pd.DataFrame(rows).to_csv(out / "grad_norm_stats.csv", index=False)
        t_grid = [int(v) for v in _split(args.t_grid)] or list(np.unique(np.linspace(1, cfg.T, 20).astype(int)))
        s = measure_dp_signal(state.net, state.emb, x, codes, state.schedule, cfg.clip_norm, t_grid, rng, labels,
                              cfg.loss, cfg.train_embeddings)
        pd.DataFrame({"t": t_grid, "signal": s}).to_csv(out / "dp_signal.csv", index=False)
    print(f"wrote diagnostics to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="privdiff", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit-schema", help="infer a schema sidecar from a CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--numeric", default="", help="comma-separated numeric columns; all others are categorical")
    s.add_argument("--label", default=None, help="label / conditioning column")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_schema)

    s = sub.add_parser("calibrate", help="noise multiplier for a target (epsilon, delta)")
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--delta", type=float, default=1e-5)
    s.add_argument("--rows", type=int, required=True, help="training rows N")
    s.add_argument("--batch", type=int, default=128)
    s.add_argument("--epochs", type=int, default=1000)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("train", help="train a model", formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="Config file: INI sections " + ", ".join(
                           f"[{k}]" for k in ("data", "model", "training", "privacy", "run")) +
                       "; `privdiff train --print-config` shows every key with its default.")
    s.add_argument("--config", default=None, help="INI config file; flags override it")
    s.add_argument("--resume", default=None, help="checkpoint to continue from")
    s.add_argument("--until-epoch", type=int, default=None, help="stop after this many completed epochs")
    s.add_argument("--print-config", action="store_true", help="print the default config and exit")
    for f in fields(RunConfig):
        s.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None,
                       help=f"{HELP[f.name]} (default: {getattr(RunConfig(), f.name)})")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="sample synthetic records from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--label-mode", default="uniform", help="uniform | fixed:<class> | proportions:<csv>")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="fidelity / utility / privacy-risk report")
    s.add_argument("--real-train", required=True)
    s.add_argument("--real-test", required=True, help="also used as the attack holdout")
    s.add_argument("--synth", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--families", default="fidelity,utility,privacy")
    s.add_argument("--secret-column", default=None)
    s.add_argument("--n-attacks", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("diagnose", help="gradient-norm statistics, DP signal s(t) and AT pmf dump")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", default=None, help="CSV to measure gradient norms on")
    s.add_argument("--rows", type=int, default=512)
    s.add_argument("--t-grid", default="", help="comma-separated timesteps for s(t)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "print_config", False):
        print(dump_config(RunConfig()))
        return EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CalibrationError, BudgetExceeded) as e:
        print(f"privacy budget error: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except (SchemaError, CodecError, UtilityError, FileNotFoundError, pd.errors.ParserError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
