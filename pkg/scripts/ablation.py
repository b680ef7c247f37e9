"""Loss x timestep-sampler ablation on the Gaussian-mixture toy at a fixed privacy budget.

    python3 scripts/ablation.py --epsilon 1 --seeds 0,1,2 --out runs/ablation.json
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from _common import config_dict, parse_into, save_json
from privdiff.experiments import marginal_gaps, run_toy, toy_config


@dataclass
class AblationConfig:
    epsilon: float = 1.0
    seeds: tuple = (0, 1, 2, 3, 4)
    epochs: int = 300
    hidden: int = 128
    n_rows: int = 5000
    out: str = "runs/ablation.json"


VARIANTS = [("mse", "uniform"), ("fa", "uniform"), ("mse", "at"), ("fa", "at")]


def main() -> None:
    cfg = parse_into(AblationConfig, __doc__)
    rows = []
    for loss, sampler in VARIANTS:
        for seed in cfg.seeds:
            t0 = time.time()
            dp = dict(dp_enabled=True, epsilon=cfg.epsilon) if cfg.epsilon > 0 else {}
            run = run_toy(toy_config(seed, cfg.epochs, cfg.hidden, loss=loss, sampler=sampler, **dp), cfg.n_rows)
            gaps = marginal_gaps(run.real, run.synth, run.state.schema)
            rows.append(dict(loss=loss, sampler=sampler, seed=seed, omega=run.omega_total, phi=run.phi,
                             phi_logreg=run.phi_logreg, noise_phi_logreg=run.noise_phi_logreg,
                             epsilon=run.state.epsilon(), max_gap=max(gaps.values()),
                             frac_clipped=float(np.nanmean([h.frac_clipped for h in run.state.history]))))
            print(f"{loss:>3}+{sampler:<7} seed {seed}: omega {run.omega_total:.4f} phi {run.phi:.4f} "
                  f"eps {run.state.epsilon():.3f} ({time.time() - t0:.0f}s)", flush=True)
    print("\nmeans over seeds")
    for loss, sampler in VARIANTS:
        sel = [r for r in rows if r["loss"] == loss and r["sampler"] == sampler]
        print(f"  {loss:>3}+{sampler:<7} omega {np.mean([r['omega'] for r in sel]):.4f}  "
              f"phi {np.mean([r['phi'] for r in sel]):.4f}")
    save_json({"config": config_dict(cfg), "runs": rows}, cfg.out)


if __name__ == "__main__":
    main()
