import dataclasses
import json
import logging
import os

import numpy as np
import pytest

from joint_annotator.corpus import Corpus, Sentence, Task
from joint_annotator.diffcore import ops
from joint_annotator.diffcore.gradcheck import analytic_grads
from joint_annotator.leakage import Splits
from joint_annotator.misc import CheckpointError, ConfigError
from joint_annotator.model import JointModel
from joint_annotator.trainer import (
    Checkpoint,
    TrainConfig,
    evaluate,
    grid_search,
    make_epoch_schedule,
    multi_seed,
    retag,
    train,
    train_step,
)

from conftest import TINY, make_sentence

FAST = TrainConfig(lr=2e-3, batch_size=20, epochs=1, model=TINY)


@pytest.fixture(scope="module")
def toy_splits(toy):
    def split(task: Task) -> Splits:
        return Splits(
            Corpus.of(toy.sentences[:40], task),
            Corpus.of(toy.sentences[40:45], task),
            Corpus.of(toy.sentences[45:], task),
        )

    return split(Task.POS), split(Task.NER), split(Task.DEP)


def one_word(form: str):
    return make_sentence([form], ["N"], ["O"], [0], ["root"])


def repeated(size: int, task: Task) -> Corpus:
    return Corpus.of([one_word("a")] * size, task)


def test_schedule_length_follows_largest_corpus():
    rng = np.random.default_rng(0)
    schedule = make_epoch_schedule(
        repeated(23906, Task.POS), repeated(14861, Task.NER), repeated(8977, Task.DEP), 32, rng
    )
    assert len(schedule) == 748
    assert all(len(b) == 32 for step in schedule[:-1] for b in step)
    assert [len(b) for b in schedule[-1]] == [2, 2, 2]


def test_schedule_covers_every_sentence():
    corpora = [
        Corpus.of([one_word(f"{task.value}{i}") for i in range(n)], task)
        for task, n in ((Task.POS, 10), (Task.NER, 7), (Task.DEP, 3))
    ]
    schedule = make_epoch_schedule(*corpora, 4, np.random.default_rng(3))
    assert len(schedule) == 3
    for k, corpus in enumerate(corpora):
        drawn = [s for step in schedule for s in step[k]]
        assert len(drawn) == 10
        assert set(drawn) == set(corpus.sentences)
    assert len({id(s) for step in schedule for s in step[0]}) == 10


def test_schedule_rejects_empty_corpus():
    empty, rng = Corpus.of((), Task.NER), np.random.default_rng(0)
    with pytest.raises(ConfigError, match="ner"):
        make_epoch_schedule(repeated(3, Task.POS), empty, repeated(3, Task.DEP), 2, rng)


def test_train_step_combines_losses(tiny_model, toy):
    batch = list(toy.sentences[:3])
    config = dataclasses.replace(FAST, lambda_pos=0.5, lambda_ner=0.3)
    before = tiny_model.store.snapshot()
    losses = train_step(tiny_model, (batch, batch, batch), config)

    assert losses.combined == pytest.approx(0.5 * losses.pos + 0.3 * losses.ner + 0.2 * losses.dep)
    assert tiny_model.store.step == 1
    after = tiny_model.store.snapshot()
    assert any(not np.array_equal(before[k], after[k]) for k in before)
    assert all(np.all(p.grad == 0) for _, p in tiny_model.store.items())


def test_combined_gradient_is_weighted_sum(tiny_model, toy):
    batch = list(toy.sentences[:2])
    params = [p for _, p in tiny_model.store.items()]
    per_task = [
        analytic_grads(lambda task=task: tiny_model.task_loss(task, batch), params)
        for task in (Task.POS, Task.NER, Task.DEP)
    ]

    def combined():
        return ops.add(
            ops.add(
                ops.scale(tiny_model.task_loss(Task.POS, batch), 0.4),
                ops.scale(tiny_model.task_loss(Task.NER, batch), 0.2),
            ),
            ops.scale(tiny_model.task_loss(Task.DEP, batch), 0.4),
        )

    total = analytic_grads(combined, params)
    for i, grad in enumerate(total):
        expected = 0.4 * per_task[0][i] + 0.2 * per_task[1][i] + 0.4 * per_task[2][i]
        np.testing.assert_allclose(grad, expected, rtol=1e-9, atol=1e-12)


def test_zero_epochs_returns_initial_parameters(toy_splits, toy_vocabs):
    config = dataclasses.replace(FAST, epochs=0, seed=3)
    checkpoint = train(config, *toy_splits)
    assert checkpoint.epoch == 0
    assert checkpoint.model.store.step == 0

    fresh = JointModel(checkpoint.model.vocabs, checkpoint.model.bpe.merges, TINY, seed=3)
    for (_, a), (_, b) in zip(fresh.store.items(), checkpoint.model.store.items()):
        np.testing.assert_array_equal(a.data, b.data)


def test_training_is_deterministic(tmp_path, toy_splits):
    for name in ("a", "b"):
        train(FAST, *toy_splits).save(str(tmp_path / name))
    for filename in ("params.bin", "params.txt", "merges.txt", "config.yaml", "scores.json"):
        assert (tmp_path / "a" / filename).read_bytes() == (tmp_path / "b" / filename).read_bytes()


def test_checkpoint_round_trip(tmp_path, toy_splits):
    pos, ner, dep = toy_splits
    checkpoint = train(FAST, pos, ner, dep)
    checkpoint.save(str(tmp_path))

    saved = json.loads((tmp_path / "scores.json").read_text(encoding="utf-8"))
    assert saved["epoch"] == checkpoint.epoch
    assert saved["scores"]["average"] == pytest.approx(checkpoint.scores.average)

    loaded = Checkpoint.load(str(tmp_path))
    assert loaded.config == FAST
    assert loaded.scores == checkpoint.scores
    sentence = pos.test[0]
    assert loaded.model.annotate(sentence) == checkpoint.model.annotate(sentence)
    assert evaluate(loaded.model, pos.valid, ner.valid, dep.valid) == checkpoint.scores

    with pytest.raises(CheckpointError):
        Checkpoint.load(str(tmp_path / "missing"))


def test_grid_skips_invalid_combinations(toy_splits):
    config = dataclasses.replace(
        FAST,
        epochs=0,
        grid_lr=(1e-3, 2e-3),
        grid_lambda_pos=(0.4, 0.7),
        grid_lambda_ner=(0.2, 0.5),
    )
    result = grid_search(config, *toy_splits)
    assert len(result.rows) == 6
    assert (0.7, 0.5) not in {(r.lambda_pos, r.lambda_ner) for r in result.rows}
    assert result.best == (1e-3, 0.4, 0.2)
    assert len(result.to_text().splitlines()) == 7

    with pytest.raises(ConfigError):
        grid_search(
            dataclasses.replace(config, grid_lambda_pos=(0.9,), grid_lambda_ner=(0.5,)),
            *toy_splits,
        )


def test_same_seed_twice_has_zero_spread(toy_splits):
    runs = multi_seed(dataclasses.replace(FAST, epochs=0), *toy_splits, [7, 7])
    assert [seed for seed, _ in runs.rows] == [7, 7]
    assert all(v == 0.0 for v in runs.stdev.values())
    assert runs.mean["average"] == pytest.approx(runs.rows[0][1].average)
    with pytest.raises(ConfigError):
        multi_seed(FAST, *toy_splits, [])


@pytest.mark.parametrize(
    "overrides",
    [
        {"lambda_pos": 0.7, "lambda_ner": 0.5},
        {"lambda_pos": -0.1},
        {"batch_size": 0},
        {"epochs": -1},
        {"lr": 0.0},
        {"max_grad_norm": 0.0},
        {"min_count": 0},
    ],
)
def test_config_errors(overrides):
    with pytest.raises(ConfigError):
        TrainConfig(**overrides)


def test_config_yaml_round_trip(tmp_path):
    config = dataclasses.replace(FAST, grid_lr=(1e-5, 3e-5), max_grad_norm=5.0)
    path = tmp_path / "train.yaml"
    config.save(str(path))
    assert TrainConfig.load(str(path)) == config
    assert config.lambda_dep == pytest.approx(0.4)


def test_config_from_yaml_text(tmp_path):
    path = tmp_path / "train.yaml"
    text = "lr: 1e-5\nlambda_pos: 0.5\nmodel:\n  encoder:\n    dim: 16\n"
    path.write_text(text, encoding="utf-8")
    config = TrainConfig.load(str(path))
    assert config.lr == 1e-5
    assert config.lambda_dep == pytest.approx(0.3)
    assert config.model.encoder.dim == 16

    path.write_text("learning_rate: 0.1\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        TrainConfig.load(str(path))


def test_bundled_defaults_match():
    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    assert TrainConfig.load(os.path.join(here, "etc", "train-conf.yaml")) == TrainConfig()


def single(task: Task, **overrides) -> TrainConfig:
    return dataclasses.replace(FAST, model=dataclasses.replace(TINY, task=task), **overrides)


@pytest.fixture(scope="module")
def pos_tagger(toy_splits) -> Checkpoint:
    return train(single(Task.POS), *toy_splits)


@pytest.mark.parametrize("task", [Task.JOINT, Task.POS, Task.NER])
def test_empty_validation_corpus_is_rejected(toy_splits, task):
    pos, ner, dep = toy_splits
    splits = {
        Task.POS: (pos._replace(valid=Corpus.of((), Task.POS)), ner, dep),
        Task.NER: (pos, ner._replace(valid=Corpus.of((), Task.NER)), dep),
    }.get(task, (pos, ner, dep._replace(valid=Corpus.of((), Task.DEP))))
    with pytest.raises(ConfigError, match="validation corpus is empty"):
        train(single(task), *splits)


def test_pos_only_model_selects_on_accuracy(toy_splits, tmp_path, caplog):
    caplog.set_level(logging.INFO, logger="joint_annotator")
    pos, ner, dep = toy_splits
    initial = train(single(Task.POS, epochs=0), pos, ner, dep)
    checkpoint = train(single(Task.POS, epochs=2), pos, ner, dep)

    model = checkpoint.model
    assert model.tasks == {Task.POS}
    assert model.ner is None and model.dep is None and model.tag_embedding is None
    assert checkpoint.scores.pos_accuracy >= initial.scores.pos_accuracy
    assert checkpoint.scores.ner.f1 == 1.0 and checkpoint.scores.las == 1.0
    assert "train_single: selected epoch" in caplog.text
    assert "pos_accuracy=" in caplog.text

    annotated = model.annotate(pos.test[0])
    assert annotated.has(Task.POS) and not annotated.has(Task.NER)
    assert all(t.head is None for t in annotated)

    checkpoint.save(str(tmp_path))
    saved = json.loads((tmp_path / "scores.json").read_text(encoding="utf-8"))
    assert saved["task"] == "pos"
    loaded = Checkpoint.load(str(tmp_path))
    assert loaded.model.tasks == {Task.POS}
    assert loaded.model.annotate(pos.test[0]) == annotated


def test_ner_only_model_has_no_tag_embedding(toy_splits):
    pos, ner, dep = toy_splits
    checkpoint = train(single(Task.NER), pos, ner, dep)
    model = checkpoint.model
    assert model.pos is None and model.dep is None
    assert model.ner.soft_dim == 0

    annotated = model.annotate(ner.test[0])
    assert annotated.has(Task.NER) and not annotated.has(Task.POS)
    assert checkpoint.scores == evaluate(model, pos.valid, ner.valid, dep.valid)
    assert checkpoint.scores.pos_accuracy == 1.0


def test_dep_model_needs_a_tagger(toy_splits):
    with pytest.raises(ConfigError, match="POS tagger"):
        train(single(Task.DEP), *toy_splits)


def test_dep_model_parses_predicted_tags(toy_splits, pos_tagger):
    pos, ner, dep = toy_splits
    tagger = pos_tagger.model
    checkpoint = train(single(Task.DEP), pos, ner, dep, tagger)
    model = checkpoint.model
    assert model.pos is None and model.ner is None
    assert model.tag_embedding is not None
    assert model.vocabs.pos is tagger.vocabs.pos

    tagged = retag(dep.test, tagger)
    assert [s.forms for s in tagged] == [s.forms for s in dep.test]
    annotated = model.annotate(tagged[0])
    assert annotated.pos_tags == tagged[0].pos_tags
    assert annotated.has(Task.DEP) and not annotated.has(Task.NER)
    assert annotated.heads.count(0) == 1
    with pytest.raises(ConfigError, match="POS tags"):
        model.annotate(Sentence.from_forms(tagged[0].forms))

    valid_inputs = retag(dep.valid, tagger)
    scores = evaluate(model, pos.valid, ner.valid, dep.valid, dep_inputs=valid_inputs)
    assert scores == checkpoint.scores

    runs = multi_seed(single(Task.DEP, epochs=0), pos, ner, dep, [5], tagger)
    assert 0.0 <= runs.mean["las"] <= runs.mean["uas"] <= 1.0


def test_retag_needs_a_pos_model(toy_splits, toy_vocabs):
    vocabs, merges = toy_vocabs
    ner_model = JointModel(vocabs, merges, dataclasses.replace(TINY, task=Task.NER))
    with pytest.raises(ConfigError, match="does not tag POS"):
        retag(toy_splits[2].test, ner_model)


def test_task_loss_needs_the_layer(toy_vocabs, toy):
    vocabs, merges = toy_vocabs
    model = JointModel(vocabs, merges, dataclasses.replace(TINY, task=Task.POS))
    with pytest.raises(ConfigError, match="no ner layer"):
        model.task_loss(Task.NER, list(toy.sentences[:1]))


def test_single_task_config_round_trip(tmp_path):
    config = single(Task.DEP)
    path = tmp_path / "train.yaml"
    config.save(str(path))
    assert TrainConfig.load(str(path)) == config
    assert TrainConfig.load(str(path)).model.task is Task.DEP
