import json

import numpy as np
import pytest
import scipy.sparse as sp

from temporec.metrics import RecencyWeights, build_recency_weights
from temporec.models import VaeArch, VaeParams
from temporec.models.vae import objective_gradients, sample_noise, vae_forward
from temporec.moo import ParetoSet
from temporec.protocols import SplitParams, assemble_phase_sets
from temporec.trainer import (
    Adam,
    TrainConfig,
    TrainingError,
    beta_at,
    capture_empirical_losses,
    read_pareto_csv,
    smsgda_step,
    train,
    write_pareto_csv,
)

from conftest import random_corpus


@pytest.fixture(scope="module")
def setup():
    corpus = random_corpus(8, n_users=60, n_items=30, n_events=900)
    sets = assemble_phase_sets(corpus, "traditional", "development", SplitParams(val_user_fraction=0.2))
    return sets, build_recency_weights(corpus.catalog)


def tiny(**kw):
    base = dict(epochs=3, batch_size=16, hidden=8, latent=4, seed=1, ks=(5,), pareto_k=5, empirical_batches=2)
    return TrainConfig(**{**base, **kw})


def test_beta_schedule():
    assert beta_at(0, 100, 0.2, 0.4) == 0.0
    assert beta_at(20, 100, 0.2, 0.4) == pytest.approx(0.1)
    assert beta_at(40, 100, 0.2, 0.4) == 0.2
    assert beta_at(99, 100, 0.2, 0.4) == 0.2
    assert beta_at(0, 100, 0.2, 0.0) == 0.2


def test_config_validation():
    for bad in ({"epochs": 0}, {"lr": 0.0}, {"objectives": ()}, {"objectives": ("novelty",)},
                {"optimizer": "rmsprop"}, {"pareto_k": 20}):
        with pytest.raises(ValueError):
            tiny(**bad)


def test_empirical_losses_positive(setup):
    sets, weights = setup
    p = VaeParams.init(VaeArch(sets.train.shape[1], 8, 4), np.random.default_rng(0))
    rows = sets.train[np.flatnonzero(sets.train.getnnz(axis=1))]
    emp = capture_empirical_losses(p, rows, weights.weights, ["relevance", "recency"], batch_size=8, n_batches=2)
    assert emp.shape == (2,) and np.all(emp > 0)
    again = capture_empirical_losses(p, rows, weights.weights, ["relevance", "recency"], batch_size=8, n_batches=2)
    assert np.array_equal(emp, again)


def test_zero_empirical_loss_rejected():
    p = VaeParams(VaeArch(4, 2, 2))
    # zero recency weights make the recency loss vanish
    with pytest.raises(TrainingError):
        capture_empirical_losses(p, sp.csr_matrix(np.eye(4)), np.zeros(4), ["recency"], batch_size=4, n_batches=1)


def test_single_objective_step_is_plain_adam(setup):
    sets, weights = setup
    x = sets.train[np.flatnonzero(sets.train.getnnz(axis=1))][:10]
    p = VaeParams.init(VaeArch(x.shape[1], 8, 4), np.random.default_rng(3))
    ref = VaeParams(p.arch, p.flat.copy())
    emp = np.array([2.5])

    opt = Adam(p.arch.size, 1e-2)
    smsgda_step(p, x, weights.weights, 0.1, emp, opt, ["relevance"], np.random.default_rng(4))

    rng = np.random.default_rng(4)
    keep, eps = sample_noise(ref.arch, x.shape[0], rng)
    fp = vae_forward(ref, x, keep, eps)
    (g,) = objective_gradients(ref, fp, x, weights.weights, 0.1, ["relevance"])[1]
    Adam(ref.arch.size, 1e-2).step(ref.flat, g / 2.5)
    np.testing.assert_allclose(p.flat, ref.flat, rtol=0, atol=1e-15)


def test_identical_objectives_follow_single_objective_path(setup):
    sets, _ = setup
    uniform = RecencyWeights.uniform(sets.train.shape[1])
    # with unit weights and no KL both objectives are the same loss
    one = train(tiny(beta_max=0.0), sets.train, sets.validation, uniform)
    two = train(tiny(beta_max=0.0, objectives=("relevance", "recency")), sets.train, sets.validation, uniform)
    np.testing.assert_allclose(two.params.flat, one.params.flat, rtol=0, atol=1e-12)
    assert all(s.alpha == pytest.approx([0.5, 0.5]) for s in two.steps)


def test_combined_norm_bounded_by_smallest_gradient(setup):
    sets, weights = setup
    res = train(tiny(objectives=("relevance", "recency")), sets.train, sets.validation, weights)
    for s in res.steps:
        assert s.combined_norm <= min(s.grad_norms) + 1e-12
        assert sum(s.alpha) == pytest.approx(1.0)


def test_single_epoch_single_front_entry(setup):
    sets, weights = setup
    res = train(tiny(epochs=1), sets.train, sets.validation, weights)
    assert len(res.pareto) == 1 and res.pareto.best().epoch == 1


def test_training_is_deterministic(setup, tmp_path):
    sets, weights = setup
    cfg = tiny(objectives=("relevance", "recency"))
    a = train(cfg, sets.train, sets.validation, weights, log_path=tmp_path / "a.ndjson")
    b = train(cfg, sets.train, sets.validation, weights, log_path=tmp_path / "b.ndjson")
    assert (tmp_path / "a.ndjson").read_bytes() == (tmp_path / "b.ndjson").read_bytes()
    assert np.array_equal(a.params.flat, b.params.flat)
    head = json.loads((tmp_path / "a.ndjson").read_text().splitlines()[0])
    assert head["record"] == "header" and head["objectives"] == ["relevance", "recency"]


def test_checkpoints_match_front(setup, tmp_path):
    sets, weights = setup
    res = train(tiny(), sets.train, sets.validation, weights, checkpoint_dir=tmp_path / "ck")
    saved = sorted(p.name for p in (tmp_path / "ck").iterdir())
    assert saved == sorted(f"epoch_{e.epoch:04d}.npz" for e in res.pareto)
    best = res.best_model()
    assert np.array_equal(best.params.flat, res.pareto.best(0).checkpoint)


def test_pareto_csv_round_trip(tmp_path):
    s = ParetoSet()
    s.update((0.1, 0.9), 2)
    s.update((1 / 3, 0.2), 5)
    rows = read_pareto_csv(write_pareto_csv(s, tmp_path / "p.csv"))
    assert [(e, r, c) for e, r, c, _ in rows] == [(2, 0.1, 0.9), (5, 1 / 3, 0.2)]


def test_empty_pareto_csv_rejected(tmp_path):
    (tmp_path / "p.csv").write_text("epoch,recall,recency,checkpoint\n")
    with pytest.raises(ValueError):
        read_pareto_csv(tmp_path / "p.csv")
    (tmp_path / "q.csv").write_text("")
    with pytest.raises(ValueError):
        read_pareto_csv(tmp_path / "q.csv")
