"""Per-sample gradient-norm statistics under MSE and FA losses on the heavy-tailed toy.

Reports the per-epoch relative variance of norms averaged over the run, plus
a one-batch look at how the FA norm relates to the MSE norm at the same weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from _common import config_dict, parse_into, save_json
from privdiff import pipeline
from privdiff.config import RunConfig
from privdiff.dp import PerSampleGrads, TrainBatch
from privdiff.experiments import grad_norm_relvar
from privdiff.toy import heavy_tailed_schema, heavy_tailed_table


@dataclass
class GradNormConfig:
    seeds: tuple = (0, 1, 2, 3, 4)
    n_rows: int = 2000
    epochs: int = 60
    hidden: int = 64
    epsilon: float = 1.0
    out: str = "runs/grad_norms.json"


def same_weights_ratio(seed: int, n_rows: int, hidden: int) -> float:
    """Norm ratio FA/MSE on one fixed batch; equals the encoded width d."""
    table = heavy_tailed_table(n_rows, seed)
    state = pipeline.init_state(RunConfig(hidden=hidden, seed=seed, dp_enabled=False, epsilon=None),
                                table, heavy_tailed_schema(table))
    data = pipeline.training_data(table, state)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(data), 256, replace=False)
    x, codes, labels = data.take(idx)
    t = rng.integers(1, state.schedule.T + 1, len(idx))
    eps = rng.standard_normal((len(idx), state.net.d))
    norms = {k: PerSampleGrads(state.net, state.emb, TrainBatch(x, codes, t, eps, labels, None),
                               state.schedule, k, False).norms() for k in ("mse", "fa")}
    return float(np.median(norms["fa"] / norms["mse"])), state.net.d


def main() -> None:
    cfg = parse_into(GradNormConfig, __doc__)
    out = {"config": config_dict(cfg), "relvar": {}}
    for loss in ("mse", "fa"):
        out["relvar"][loss] = [grad_norm_relvar(loss, s, cfg.n_rows, cfg.epochs, cfg.hidden, cfg.epsilon)
                               for s in cfg.seeds]
        print(f"{loss}: relvar per seed {np.round(out['relvar'][loss], 5).tolist()}, "
              f"mean {np.mean(out['relvar'][loss]):.5f}", flush=True)
    ratio, d = same_weights_ratio(cfg.seeds[0], cfg.n_rows, cfg.hidden)
    print(f"same weights: median |g_fa|/|g_mse| = {ratio:.6f} (encoded width d = {d})")
    out["same_weights_ratio"], out["d"] = ratio, d
    save_json(out, cfg.out)


if __name__ == "__main__":
    main()
