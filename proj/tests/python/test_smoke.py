import itertools
import json
import math
import os
from pathlib import Path

import pytest

import mednli

DATA_DIR = Path(os.environ.get("MEDNLI_DATA_DIR", Path(__file__).resolve().parents[2] / "data"))


def test_corpus_is_balanced_and_round_trips(tmp_path):
    rows = mednli.generate_corpus(count=30, seed=1)
    assert [r["gold_label"] for r in rows[:3]] == list(mednli.LABELS)
    assert len({r["pairID"] for r in rows}) == 30
    path = tmp_path / "c.jsonl"
    mednli.save_dataset(path, rows)
    assert mednli.load_dataset(path) == rows
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) >= {"sentence1", "sentence2", "gold_label", "pairID"}


def test_tokenize_word_and_wordpiece():
    assert mednli.tokenize("no fever", ["patient has fever"]) == ["[UNK]", "fever"]
    pieces = mednli.tokenize("fevers", ["fever fever fevers"], mode="wordpiece", wordpiece_size=30)
    assert "".join(p.removeprefix("##") for p in pieces) == "fevers"
    assert mednli.tokenize("fevez", ["fever"], mode="wordpiece", wordpiece_size=20)[-1] == "[UNK]"


def test_expand():
    table = "NSR\tnormal sinus rhythm\n"
    text = "Patient has NSR post-cardioversion"
    assert mednli.expand(text, table) == "Patient has normal sinus rhythm post-cardioversion"
    assert mednli.expand_with_table_file(text, DATA_DIR / "abbrev_demo.tsv") == mednli.expand(text, table)
    with pytest.raises(mednli.ParseError):
        mednli.expand("x", "no tab here\n")


def test_listwise_matches_brute_force():
    probs = [[0.6, 0.3, 0.1], [0.5, 0.1, 0.4], [0.7, 0.2, 0.1]]
    best = max(itertools.permutations(range(3)), key=lambda p: sum(math.log(probs[k][p[k]]) for k in range(3)))
    labels, score = mednli.assign_listwise(probs)
    assert labels == [mednli.LABELS[i] for i in best]
    assert score == pytest.approx(sum(math.log(probs[k][best[k]]) for k in range(3)), abs=1e-12)


def test_agreement_partition():
    gold = ["entailment", "neutral", "contradiction", "neutral"]
    a = ["entailment", "neutral", "neutral", "entailment"]
    b = ["entailment", "entailment", "contradiction", "entailment"]
    assert mednli.agreement_partition(gold, a, b) == {"both": 1, "only_a": 1, "only_b": 1, "neither": 1}


def test_cli_train_and_model(tmp_path):
    code, out, _ = mednli.run_cli(["synth", "--count", "60", "--seed", "2", "--out-dir", str(tmp_path / "d")])
    assert code == 0 and "train=48 dev=6 test=6" in out
    config = tmp_path / "run.json"
    config.write_text(json.dumps({
        "model": "compaggr",
        "model_config": {"embed_dim": 8, "width": 8, "filter_widths": [1, 2], "filters_per_width": 4},
        "train_config": {"learning_rate": 0.01, "batch_size": 4, "max_epochs": 2},
    }))
    code, out, err = mednli.run_cli(["train", "--config", str(config), "--train", str(tmp_path / "d/train.jsonl"),
                                     "--dev", str(tmp_path / "d/dev.jsonl"), "--out-dir", str(tmp_path / "m")])
    assert code == 0, err
    assert "train_acc=" in out

    model = mednli.Model(tmp_path / "m/checkpoint.bin")
    assert model.kind == "compaggr"
    assert model.provenance == ["train"]
    p = model.predict("patient has fever", "no fever")
    assert len(p) == 3 and sum(p) == pytest.approx(1.0, abs=1e-12)
    assert sorted(model.listwise("patient has fever", ["a", "b", "c"])) == sorted(mednli.LABELS)

    assert mednli.run_cli(["synth", "--shift", "2"])[0] == 2
    with pytest.raises(mednli.DataError):
        mednli.Model(tmp_path / "missing.bin")
