import json
import os
import pathlib

import pytest

import ragforge

ROOT = pathlib.Path(os.environ.get("RAGFORGE_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    corpus = (ROOT / "data/toy/corpus.jsonl").read_text().splitlines()[:300]
    queries = (ROOT / "data/toy/queries.jsonl").read_text().splitlines()[:60]
    (d / "corpus.jsonl").write_text("\n".join(corpus) + "\n")
    (d / "queries.jsonl").write_text("\n".join(queries) + "\n")
    cfg = {
        "paths": {"corpus": "corpus.jsonl", "queries": "queries.jsonl", "output_dir": "out"},
        "encoder": {"embed_dim": 16, "fit": {"enabled": True, "steps": 80}},
        "shadow": {"topics": 3},
        "attack": {"poison_rate_percent": 1.0},
        "gcg": {"max_iters": 15, "init_lengths": [10, 12], "candidates_per_position": 16},
        "defense": {"dtf": {"enabled": True}},
        "transfer": {"k": 10, "encoder_count": 2},
        "sweep": {"axis": "k", "values": ["1", "5"]},
    }
    path = d / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def test_text_helpers():
    assert ragforge.split_tokens("Visit www.X.com!") == ["visit", "www", ".", "x", ".", "com", "!"]
    assert ragforge.lexical_f1("a b", "a b") == pytest.approx(1.0)
    assert ragforge.normalize_for_dedup("  A  b ") == ragforge.normalize_for_dedup("a b")


def test_budgets_sum_to_rounded_total():
    budgets, total, shares = ragforge.allocate_budgets(2000, 0.005, [30, 20, 10])
    assert total == 10
    assert sum(budgets) == 10
    assert budgets == [5, 3, 2]
    assert len(shares) == 3


def test_budget_below_one_document_raises():
    with pytest.raises(ragforge.Error):
        ragforge.allocate_budgets(100, 0.005, [3])


def test_bad_config_raises_config_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"paths": {"corpus": "c", "queries": "q"}, "nope": 1}')
    with pytest.raises(ragforge.ConfigError):
        ragforge.config_hash(p)


def test_craft_and_evaluate(small_config):
    ex = ragforge.Experiment(small_config)
    docs = ex.craft()
    assert len(docs) == 3
    assert all(d["id"].startswith("poison-") for d in docs)
    report = ragforge.evaluate(ex)
    assert report["k"] == [5, 10, 20]
    assert sorted(report["metrics"], key=int) == ["5", "10", "20"]
    for m in report["metrics"].values():
        assert 0.0 <= m["asr_t"] <= m["asr_r"] <= 1.0
    # A second experiment on the same config reproduces the report.
    again = ragforge.Experiment(small_config)
    assert again.evaluate_json() == ex.evaluate_json()


def test_ablation_without_suffix(small_config):
    ex = ragforge.Experiment(small_config)
    docs = ex.craft(include_adv=False)
    assert len(docs) == 3


def test_transfer_and_sweep(small_config):
    ex = ragforge.Experiment(small_config)
    t = ragforge.transfer(ex)
    assert len(t["transfer"]["cells"]) == 4
    s = ragforge.sweep(ex)
    assert [p["value"] for p in s["sweep"]] == ["1", "5"]
