import pytest

from temporec.seeding import derive_seed, stage_rng


def test_stage_seeds_are_stable_and_distinct():
    assert derive_seed(0, "split") == derive_seed(0, "split")
    seeds = {derive_seed(0, s) for s in ("split", "model", "corpus")} | {derive_seed(1, "split")}
    assert len(seeds) == 4


def test_nested_stages_differ_from_flat():
    assert derive_seed(3, "model", "init") != derive_seed(3, "model")


def test_stage_rng_streams_repeat():
    assert stage_rng(5, "a").random(3).tolist() == stage_rng(5, "a").random(3).tolist()


def test_negative_root_rejected():
    with pytest.raises(ValueError):
        derive_seed(-1, "split")
