import json

import pytest

from shallowfusion.cli import main


@pytest.fixture(scope="module")
def task(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--sentences", "400", "--dev", "12", "--test", "12",
                 "--vocab-size", "20", "--seed", "3", "--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def bigram(task, tmp_path_factory):
    out = tmp_path_factory.mktemp("lm")
    assert main(["tokenize", "--model", str(task / "units.wp"), "--in", str(task / "train.txt"),
                 "--out", str(out / "train.units")]) == 0
    assert main(["ngram", "train", "--corpus", str(out / "train.units"), "--order", "2",
                 "--out", str(out / "lm.arpa")]) == 0
    return out / "lm.arpa"


def read(path):
    return path.read_text(encoding="utf-8")


def test_wer_of_identical_files(tmp_path, capsys):
    ref = tmp_path / "ref"
    ref.write_text("u1\ta b c\nu2\td e\n")
    assert main(["wer", "--ref", str(ref), "--hyp", str(ref)]) == 0
    assert capsys.readouterr().out.startswith("WER 0.000")


def test_wer_counts_missing_hypothesis_as_deletions(tmp_path, capsys):
    ref, hyp = tmp_path / "ref", tmp_path / "hyp"
    ref.write_text("u1\ta b c\nu2\td\n")
    hyp.write_text("u1\ta x c\n")
    assert main(["wer", "--ref", str(ref), "--hyp", str(hyp)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("WER 0.500") and "S=1" in out and "D=1" in out


def test_wer_extra_hypothesis_is_an_input_error(tmp_path):
    ref, hyp = tmp_path / "ref", tmp_path / "hyp"
    ref.write_text("u1\ta\n")
    hyp.write_text("u1\ta\nu9\tb\n")
    assert main(["wer", "--ref", str(ref), "--hyp", str(hyp)]) == 3


def test_zero_lambda_matches_decoding_without_lm(task, bigram, tmp_path):
    common = ["decode", "--lattices", str(task / "test"), "--beam", "4", "--gamma", "0.5"]
    assert main(common + ["--out", str(tmp_path / "plain")]) == 0
    assert main(common + ["--lm", "ngram:" + str(bigram), "--lambda", "0",
                          "--out", str(tmp_path / "fused")]) == 0
    assert read(tmp_path / "plain") == read(tmp_path / "fused")


def test_tuned_weights_beat_untuned(task, bigram, tmp_path):
    assert main(["tune", "--dev", str(task / "dev"), "--refs", str(task / "dev.ref"),
                 "--lm", "ngram:" + str(bigram), "--lambda-grid", "0,0.5",
                 "--gamma-grid", "0,0.5", "--beam", "4", "--out", str(tmp_path / "tune.json")]) == 0
    report = json.loads(read(tmp_path / "tune.json"))
    wers = {(r["lambda"], r["gamma"]): r["wer"] for r in report["grid"]}
    assert report["best"]["wer"] == min(wers.values())
    assert report["best"]["wer"] < wers[(0.0, 0.0)]


def test_nbest_rescoring_round_trip(task, bigram, tmp_path):
    nbest = tmp_path / "nbest.jsonl"
    assert main(["decode", "--lattices", str(task / "test"), "--beam", "4", "--nbest", "4",
                 "--out", str(tmp_path / "first"), "--nbest-out", str(nbest)]) == 0
    records = [json.loads(line) for line in read(nbest).splitlines()]
    assert {"utt", "rank", "tokens", "fused", "complete"} <= set(records[0])
    assert main(["rescore", "--nbest", str(nbest), "--out", str(tmp_path / "same")]) == 0
    assert read(tmp_path / "same") == read(tmp_path / "first")
    assert main(["rescore", "--nbest", str(nbest), "--lm", "ngram:" + str(bigram),
                 "--lambda", "0.5", "--out", str(tmp_path / "re")]) == 0


def test_lm_perplexity_report(task, bigram, tmp_path, capsys):
    units = bigram.parent / "train.units"
    assert main(["lm", "ppl", "--lm", str(bigram), "--corpus", str(units)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("sentences ") and " ppl " in out


def test_lambda_without_lm_is_a_usage_error(task, tmp_path):
    assert main(["decode", "--lattices", str(task / "test"), "--lambda", "0.5",
                 "--out", str(tmp_path / "x")]) == 2


def test_bad_flag_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["decode", "--beam", "many"])
    assert info.value.code == 2
    assert len(capsys.readouterr().err.strip().splitlines()) == 1


def test_missing_file_is_an_input_error(tmp_path):
    assert main(["ngram", "train", "--corpus", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "lm.arpa")]) == 3


def test_malformed_arpa_is_an_input_error(tmp_path):
    bad = tmp_path / "bad.arpa"
    bad.write_text("\\data\\\nngram 1=2\n")
    assert main(["lm", "ppl", "--lm", str(bad), "--corpus", str(bad)]) == 3


def test_diverging_training_is_a_numeric_error(task, tmp_path):
    assert main(["rnnlm", "train", "--corpus", str(task / "train.txt"),
                 "--units", str(task / "units.wp"), "--epochs", "1", "--hidden", "8",
                 "--embed", "4", "--lr", "1e9", "--out", str(tmp_path / "x.ckpt")]) == 4


def test_config_file_sets_defaults_and_flags_win(tmp_path):
    corpus = tmp_path / "c.txt"
    corpus.write_text("a b a\nb a\na a b\n")
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"order": 1}))
    assert main(["--config", str(config), "ngram", "train", "--corpus", str(corpus),
                 "--out", str(tmp_path / "one.arpa")]) == 0
    assert "ngram 2=" not in read(tmp_path / "one.arpa")
    assert main(["--config", str(config), "ngram", "train", "--corpus", str(corpus),
                 "--order", "2", "--out", str(tmp_path / "two.arpa")]) == 0
    assert "ngram 2=" in read(tmp_path / "two.arpa")


def test_wordpiece_training_and_tokenize(tmp_path):
    corpus = tmp_path / "c.txt"
    corpus.write_text("low lower lowest\nnew newer\n")
    assert main(["wp", "train", "--corpus", str(corpus), "--size", "15",
                 "--out", str(tmp_path / "m.wp")]) == 0
    assert main(["tokenize", "--model", str(tmp_path / "m.wp"), "--in", str(corpus),
                 "--out", str(tmp_path / "units")]) == 0
    lines = read(tmp_path / "units").splitlines()
    assert len(lines) == 2
    assert "".join(lines[0].split()).replace("_", " ").strip() == "low lower lowest"
