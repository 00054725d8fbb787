import pytest

import duel


def test_mini_scan_and_interpreter():
    data = duel.generate_mini_scan()
    assert len(data) == 20910
    assert duel.interpret_scan("jump twice after walk left") == "LTURN WALK JUMP JUMP"
    with pytest.raises(duel.InputError):
        duel.interpret_scan("jump jump")


def test_lexical_variant_keeps_structure():
    lexicon = duel.LexiconTable.parse("verb\tjump\thop\n")
    data = duel.Dataset([("jump twice", "JUMP JUMP", None)], "toy")
    variant = duel.make_lexical_variant(data, lexicon, 1)
    assert variant.dataset.examples[0].input == "hop twice"
    assert variant.dataset.examples[0].output == "HOP HOP"
    assert variant.mapping == {"jump": "hop"}


def test_divergence_and_mcd_split():
    config = duel.MiniScanConfig()
    config.max_examples = 60
    data = duel.generate_mini_scan(config, 3)
    assert duel.chernoff_coefficient({"a": 1.0}, {"a": 1.0}, 0.1) == 1.0
    split = duel.mcd_split(data, 45, 15, iterations=500, seed=2)
    assert len(split.train) == 45 and len(split.test) == 15
    assert duel.atoms_covered(data, split.train_indices, split.test_indices)
    standard = duel.standard_split(data, 0.75, 2)
    assert split.divergence >= duel.compound_divergence(standard.train, standard.test)


def test_monitor_and_scoring():
    monitor = duel.EarlyStopMonitor(1)
    assert [monitor.update(a) for a in (0.5, 0.6, 0.6, 0.6)] == [False, False, False, True]
    data = duel.Dataset([("a", "A", "x"), ("b", "B", None)], "d")
    result = duel.score_predictions(data, ["A", "Q"])
    assert result.correct == 1
    assert result.per_category["untagged"].total == 1
    with pytest.raises(duel.Error):
        duel.score_predictions(data, ["A"])


def test_tiny_experiment(tmp_path):
    config = f"""
[experiment]
name = tiny
method = NONE
seeds = 1
output_dir = {tmp_path}

[model]
embed_dim = 8
num_heads = 2
encoder_layers = 1
decoder_layers = 1
ffn_dim = 16
max_src_len = 24
max_tgt_len = 50

[target]
name = scan
max_examples = 40
split = length

[finetune]
steps = 4
batch_size = 4
eval_every = 2
"""
    report = duel.run_experiment(config)
    assert report.method == "NONE"
    assert report.seeds[0].ok
    assert 0.0 <= report.mean_accuracy() <= 1.0
    assert "NONE" in duel.report_table([report])
    with pytest.raises(duel.ConfigError):
        duel.run_experiment(config, {"finetune.bogus": "1"})
