import numpy as np
import pandas as pd
import pytest

from privdiff import pipeline
from privdiff.accountant import compute_epsilon
from privdiff.codec import SchemaError, TableSchema, fit_schema, read_csv
from privdiff.config import ConfigError, RunConfig
from privdiff.toy import MIXTURE_KINDS, mixture_schema, mixture_table


def small_cfg(**kw):
    base = dict(hidden=16, d_time=8, T=20, epochs=4, batch_size=32, lr=1e-2, precision="float64",
                epsilon=5.0, seed=3)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def toy():
    t = mixture_table(256, 0)
    return t, mixture_schema(t)


def fresh(cfg, toy):
    table, schema = toy
    state = pipeline.init_state(cfg, table, schema)
    return state, pipeline.training_data(table, state)


def test_steps_per_epoch():
    assert pipeline.steps_per_epoch(30000, 128) == 234
    assert pipeline.steps_per_epoch(10, 128) == 1


def test_dp_training_runs_and_respects_budget(toy):
    cfg = small_cfg()
    state, data = fresh(cfg, toy)
    pipeline.train(state, data)
    assert state.epoch == 4
    assert state.ledger.steps_taken == 4 * pipeline.steps_per_epoch(256, 32)
    eps = state.epsilon()
    assert 0.95 * 5.0 <= eps <= 5.0
    assert eps == compute_epsilon(state.ledger.sigma, state.ledger.q, state.ledger.steps_taken, cfg.delta)
    assert all(h.epsilon <= 5.0 for h in state.history)
    assert all(np.isfinite(h.loss) for h in state.history)


def test_budget_stop_is_clean(toy):
    cfg = small_cfg()
    state, data = fresh(cfg, toy)
    state.ledger.max_steps = 5
    pipeline.train(state, data)
    assert state.stopped_on_budget
    assert state.ledger.steps_taken == 5
    assert state.epsilon() <= 5.0


def test_in_loop_clipping_check(toy):
    cfg = small_cfg(check_clipping=True, clip_norm=0.05, epochs=1, train_embeddings=True)
    state, data = fresh(cfg, toy)
    seen = []
    pipeline.train(state, data, on_batch=lambda st, g: seen.append(g is not None))
    assert any(seen)
    assert state.history[0].frac_clipped > 0


def test_clip_violation_detected(toy, monkeypatch):
    cfg = small_cfg(check_clipping=True, epochs=1)
    state, data = fresh(cfg, toy)
    monkeypatch.setattr(pipeline, "clip_coefficients", lambda norms, c: np.ones_like(norms) * 10)
    with pytest.raises(pipeline.ClippingViolation):
        pipeline.train(state, data)


def test_non_dp_loss_decreases(toy):
    cfg = small_cfg(dp_enabled=False, epsilon=None, epochs=30)
    state, data = fresh(cfg, toy)
    pipeline.train(state, data)
    assert state.ledger is None and state.epsilon() == 0.0
    assert state.history[-1].loss < state.history[0].loss


def test_same_seed_same_checkpoint_bytes(toy, tmp_path):
    for i in range(2):
        state, data = fresh(small_cfg(epochs=2), toy)
        pipeline.train(state, data)
        state.save(tmp_path / f"{i}.ckpt")
    assert (tmp_path / "0.ckpt").read_bytes() == (tmp_path / "1.ckpt").read_bytes()


@pytest.mark.parametrize("sampler", ["at", "uniform"])
def test_resume_matches_straight_run(toy, tmp_path, sampler):
    cfg = small_cfg(sampler=sampler, epochs=4)
    straight, data = fresh(cfg, toy)
    pipeline.train(straight, data)

    half, data = fresh(cfg, toy)
    pipeline.train(half, data, until_epoch=2)
    half.save(tmp_path / "half.ckpt")
    resumed = pipeline.TrainState.load(tmp_path / "half.ckpt")
    pipeline.train(resumed, pipeline.training_data(toy[0], resumed))

    assert resumed.epsilon() == straight.epsilon()
    for k, v in straight.net.params.items():
        assert resumed.net.params[k].tobytes() == v.tobytes()
    resumed.save(tmp_path / "a.ckpt")
    straight.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


@pytest.mark.parametrize("loss,sampler", [("mse", "uniform"), ("fa", "uniform"), ("mse", "at"), ("fa", "at")])
def test_ledger_independent_of_loss_and_sampler(toy, loss, sampler):
    state, data = fresh(small_cfg(loss=loss, sampler=sampler, epochs=2), toy)
    pipeline.train(state, data)
    ref, data = fresh(small_cfg(epochs=2), toy)
    pipeline.train(ref, data)
    assert state.ledger.sigma == ref.ledger.sigma
    assert state.epsilon() == ref.epsilon()


def test_explicit_sigma(toy):
    state, _ = fresh(small_cfg(epsilon=None, sigma=3.0), toy)
    assert state.ledger.sigma == 3.0


def test_is_correction_trains(toy):
    state, data = fresh(small_cfg(is_correction=True, epochs=1), toy)
    pipeline.train(state, data)
    assert np.isfinite(state.history[0].loss)


def test_non_finite_training_aborts(toy):
    state, data = fresh(small_cfg(dp_enabled=False, epsilon=None, epochs=1), toy)
    state.net.params["net.b_out"][:] = np.nan
    with pytest.raises(FloatingPointError):
        pipeline.train(state, data)


@pytest.fixture(scope="module")
def trained(toy):
    state, data = fresh(small_cfg(epochs=2), toy)
    return pipeline.train(state, data)


def test_generate_uniform_labels(trained):
    synth = pipeline.generate(trained, 1000, "uniform", seed=0)
    assert synth.columns.tolist() == trained.schema.names
    n_pos = (synth.label == "pos").sum()
    assert abs(n_pos - 500) <= 3 * np.sqrt(250)


def test_generate_fixed_label(trained):
    assert set(pipeline.generate(trained, 50, "fixed:neg", seed=0).label) == {"neg"}
    with pytest.raises(SchemaError):
        pipeline.generate(trained, 5, "fixed:maybe")


def test_generate_proportions(trained, tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("label,proportion\nneg,0.9\npos,0.1\n")
    synth = pipeline.generate(trained, 2000, f"proportions:{p}", seed=1)
    assert (synth.label == "neg").mean() == pytest.approx(0.9, abs=0.03)
    p.write_text("label,proportion\nneg,0.9\npos,0.2\n")
    with pytest.raises(ConfigError):
        pipeline.generate(trained, 10, f"proportions:{p}")
    with pytest.raises(ConfigError):
        pipeline.generate(trained, 10, "sometimes")


def test_generated_csv_reparses_under_schema(trained, tmp_path):
    synth = pipeline.generate(trained, 200, seed=2)
    pipeline.write_table(synth, tmp_path / "s.csv")
    back = read_csv(tmp_path / "s.csv")
    for c in trained.schema.categorical_columns:
        assert set(back[c.name]) <= set(c.vocab)
    for c in trained.schema.numeric_columns:
        np.testing.assert_array_equal(back[c.name].map(float).to_numpy(), synth[c.name].to_numpy())


def test_generate_deterministic(trained):
    a = pipeline.generate(trained, 20, seed=4)
    b = pipeline.generate(trained, 20, seed=4)
    pd.testing.assert_frame_equal(a, b)


def test_evaluate_copy_and_missing_columns(toy):
    table, schema = toy
    test = mixture_table(256, 1)
    rep = pipeline.evaluate(table, test, table.copy(), schema, ("fidelity",))
    assert abs(rep.fidelity.omega_total - 1) < 1e-9
    with pytest.raises(SchemaError):
        pipeline.evaluate(table, test, table.drop(columns="cat"), schema)


def test_schema_for_config(tmp_path, toy):
    table, schema = toy
    cfg = small_cfg(numeric_columns=["x1", "x2"], label_column="label")
    assert pipeline.schema_for(cfg, table.astype(str)) == fit_schema(table.astype(str), MIXTURE_KINDS, "label")
    schema.save(tmp_path / "s.json")
    assert pipeline.schema_for(small_cfg(schema_path=str(tmp_path / "s.json")), table) == schema
    with pytest.raises(SchemaError):
        pipeline.schema_for(small_cfg(numeric_columns=["zz"]), table)


def test_load_training_table_subsample(tmp_path, toy):
    toy[0].to_csv(tmp_path / "t.csv", index=False)
    t = pipeline.load_training_table(small_cfg(train_csv=str(tmp_path / "t.csv"), subsample_rows=100))
    assert len(t) == 100
    with pytest.raises(ConfigError):
        pipeline.load_training_table(small_cfg())


def test_history_files(trained, tmp_path):
    pipeline.write_history(trained.history, tmp_path / "h.csv")
    pipeline.write_grad_norms(trained.history, tmp_path / "g.csv")
    assert len(pd.read_csv(tmp_path / "h.csv")) == 2
    assert pd.read_csv(tmp_path / "g.csv").columns.tolist() == ["epoch", "mean", "var", "relvar", "skew",
                                                                "frac_clipped"]
    assert TableSchema.from_dict(trained.schema.to_dict()) == trained.schema
