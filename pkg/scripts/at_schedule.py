"""Dump the annealed timestep pmf at a few epochs, with its mean timestep and entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from _common import config_dict, parse_into, save_json
from privdiff.timesteps import ATSamplerState


@dataclass
class ATConfig:
    T: int = 500
    epochs: int = 1000
    alpha_start: float = 3.0
    alpha_end: float = -1.0
    checkpoints: tuple = (0, 250, 500, 750, 1000)
    out: str = "runs/at_schedule.json"


def main() -> None:
    cfg = parse_into(ATConfig, __doc__)
    t = np.arange(1, cfg.T + 1)
    rows = []
    for k in cfg.checkpoints:
        s = ATSamplerState(cfg.T, cfg.epochs, cfg.alpha_start, cfg.alpha_end, k)
        p = s.pmf
        rows.append(dict(epoch=k, alpha=s.alpha, mean_t=float(p @ t), p_first=float(p[0]), p_last=float(p[-1]),
                         entropy_bits=float(-(p * np.log2(p)).sum()), pmf=p.tolist()))
        print(f"epoch {k:>5}: alpha {s.alpha:+.2f}  E[t] {p @ t:7.1f}  P(1) {p[0]:.2e}  P(T) {p[-1]:.2e}")
    save_json({"config": config_dict(cfg), "pmfs": rows}, cfg.out)


if __name__ == "__main__":
    main()
