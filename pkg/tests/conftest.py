from __future__ import annotations

import numpy as np
import pytest

from privdiff.codec import CATEGORICAL, NUMERIC, Column, TableSchema, embed_arrays, init_embeddings
from privdiff.diffusion import Denoiser, make_schedule, noisy, per_sample_loss
from privdiff.dp import TrainBatch, model_params


def random_problem(seed, d_num=2, d_cat=2, d_e=2, hidden=16, n=5, n_classes=2, T=50, weights=False):
    rng = np.random.default_rng(seed)
    cols = [Column(f"n{i}", NUMERIC) for i in range(d_num)]
    cols += [Column(f"c{j}", CATEGORICAL, tuple("abcd"[: 2 + j % 3])) for j in range(d_cat)]
    schema = TableSchema(tuple(cols))
    emb = init_embeddings(schema, d_e, seed=seed)
    net = Denoiser(schema.encoded_width(d_e), hidden, d_time=6, n_classes=n_classes, seed=seed, dtype=np.float64)
    for v in net.params.values():  # non-zero biases so their gradients are exercised
        v += 0.1 * rng.standard_normal(v.shape)
    codes = np.stack([rng.integers(0, len(c.vocab), n) for c in schema.categorical_columns], axis=1) \
        if d_cat else np.zeros((n, 0), dtype=np.int64)
    batch = TrainBatch(
        x_scaled=rng.standard_normal((n, d_num)),
        codes=codes,
        t=rng.integers(1, T + 1, n),
        eps=rng.standard_normal((n, net.d)),
        labels=rng.integers(0, n_classes, n) if n_classes else None,
        weights=rng.uniform(0.5, 2.0, n) if weights else None,
    )
    return net, emb, batch, make_schedule(T, 1e-4, 0.02)


def sample_loss(net, emb, batch, schedule, kind, i):
    """Loss of sample i recomputed through the forward pass only."""
    sl = slice(i, i + 1)
    z0 = embed_arrays(batch.x_scaled[sl], batch.codes[sl], emb)
    z_t = noisy(z0, batch.t[sl], batch.eps[sl], schedule)
    out = net(z_t, batch.t[sl], None if batch.labels is None else batch.labels[sl])
    w = 1.0 if batch.weights is None else batch.weights[i]
    return w * per_sample_loss(batch.eps[sl], out, kind)[0]


def finite_difference_grad(net, emb, batch, schedule, kind, i, train_embeddings=True, h=1e-6):
    params = model_params(net, emb, train_embeddings)
    grads = []
    for p in params.values():
        flat = p.reshape(-1)
        g = np.empty(flat.size)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = sample_loss(net, emb, batch, schedule, kind, i)
            flat[k] = old - h
            down = sample_loss(net, emb, batch, schedule, kind, i)
            flat[k] = old
            g[k] = (up - down) / (2 * h)
        grads.append(g)
    return np.concatenate(grads)


@pytest.fixture
def problem():
    return random_problem(0)


# acceptance lines collected during the run and echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
