import json

import pytest

from temporec.config import config_from_dict, with_overrides
from temporec.experiment import ReportError, StageError, load_bundle, report, run_experiment, run_experiments
from temporec.protocols import read_manifest
from temporec.experiment import load_corpus

TINY = {
    "name": "tiny",
    "seed": 3,
    "corpus": {"synthetic": {"n_users": 150, "n_items": 40, "events_mean": 15, "min_events": 8}},
    "preprocess": {"min_user_deg": 2, "min_item_deg": 2},
    "split": {"protocol": "traditional", "val_user_fraction": 0.2},
    "model": {"name": "popularity", "epochs": 2, "hidden": 16, "latent": 4, "batch_size": 32},
    "metrics": {"ks": [5, 10], "pareto_k": 10},
}


def tiny(**overrides):
    return with_overrides(config_from_dict(TINY), overrides)


@pytest.fixture(scope="module")
def pop_bundle(tmp_path_factory):
    return run_experiment(tiny(), tmp_path_factory.mktemp("pop"))


def test_popularity_traditional_smoke(pop_bundle):
    m = json.loads((pop_bundle / "metrics.json").read_text())
    assert m["protocol"] == "traditional" and m["model"] == "popularity"
    assert [r["K"] for r in m["validation"]] == [5, 10] and [r["K"] for r in m["test"]] == [5, 10]
    names = {p.name for p in pop_bundle.iterdir()}
    assert {"manifest.json", "config.json", "split.json", "metrics.json", "pareto.csv", "model.npz"} <= names


def test_manifest_records_hashes(pop_bundle):
    man = json.loads((pop_bundle / "manifest.json").read_text())
    assert man["config_hash"] == tiny().digest()
    assert len(man["corpus_hash"]) == 64
    assert set(man["files"]) >= {"metrics.json", "pareto.csv", "split.json"}


def test_split_reproducible_from_manifest(pop_bundle):
    corpus = load_corpus(tiny())
    sets = read_manifest(pop_bundle / "split.json", corpus)
    assert sets.protocol == "traditional"


def test_rerun_is_byte_identical(pop_bundle, tmp_path):
    again = run_experiment(tiny(), tmp_path / "again")
    for name in ("metrics.json", "manifest.json", "pareto.csv", "split.json"):
        assert (again / name).read_bytes() == (pop_bundle / name).read_bytes()


def test_vae_bundle_has_checkpoints(tmp_path):
    out = run_experiment(tiny(**{"model.name": "vae", "objectives": ["relevance", "recency"]}), tmp_path / "v")
    rows = (out / "pareto.csv").read_text().splitlines()[1:]
    assert rows
    for row in rows:
        assert (out / row.split(",")[3]).is_file()
    assert (out / "train_log.ndjson").is_file()


def test_stage_error_names_the_stage(tmp_path):
    cfg = tiny(**{"corpus.source": "csv", "corpus.path": str(tmp_path / "missing.csv")})
    with pytest.raises(StageError) as err:
        run_experiment(cfg, tmp_path / "x")
    assert err.value.stage == "corpus"


def test_parallel_runs_match_serial(pop_bundle, tmp_path):
    cfgs = [tiny(), tiny(**{"name": "svd", "model.name": "svd", "model.rank": 5})]
    paths = run_experiments(cfgs, [tmp_path / "a", tmp_path / "b"], jobs=2)
    assert (paths[0] / "metrics.json").read_bytes() == (pop_bundle / "metrics.json").read_bytes()


def test_report_identical_bundles_neither(pop_bundle, tmp_path):
    twin = run_experiment(tiny(**{"name": "twin"}), tmp_path / "twin")
    res = report([pop_bundle, twin], tmp_path / "rep")
    assert res.verdicts == [{"A": "tiny", "B": "twin", "verdict": "neither"}]
    assert (tmp_path / "rep" / "report.csv").read_text().startswith("bundle,model,objectives")
    assert (tmp_path / "rep" / "front_tiny.csv").read_text().startswith("recall,recency,epoch\n")


def test_report_dominance_verdict(pop_bundle, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d, point in ((a, (0.13, 0.47)), (b, (0.11, 0.23))):
        d.mkdir()
        m = json.loads((pop_bundle / "metrics.json").read_text())
        m["name"] = d.name
        (d / "metrics.json").write_text(json.dumps(m))
        (d / "pareto.csv").write_text(f"epoch,recall,recency,checkpoint\n1,{point[0]},{point[1]},\n")
    assert report([a, b]).verdicts[0]["verdict"] == "A dominates B"


def test_report_never_mutates_bundles(pop_bundle, tmp_path):
    before = {p: p.read_bytes() for p in pop_bundle.rglob("*") if p.is_file()}
    report([pop_bundle], tmp_path / "rep")
    assert {p: p.read_bytes() for p in pop_bundle.rglob("*") if p.is_file()} == before


def test_report_empty_pareto_rejected(pop_bundle, tmp_path):
    d = tmp_path / "empty"
    d.mkdir()
    (d / "metrics.json").write_bytes((pop_bundle / "metrics.json").read_bytes())
    (d / "pareto.csv").write_text("epoch,recall,recency,checkpoint\n")
    with pytest.raises(ReportError, match="empty"):
        load_bundle(d)


def test_report_incompatible_ks(pop_bundle, tmp_path):
    other = run_experiment(tiny(**{"name": "k20", "metrics.ks": [20], "metrics.pareto_k": 20}), tmp_path / "k")
    with pytest.raises(ReportError, match="incompatible Ks"):
        report([pop_bundle, other])
