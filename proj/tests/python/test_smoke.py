import math
import random

import numpy as np
import pytest

import amcen

SMALL = {"dim": 8, "heads": 2, "window": 3, "stage1_epochs": 2, "stage2_epochs": 2,
         "batch_size": 32, "dropout": 0.0, "seed": 5}


def synthetic_facts(seed=3, entities=10, relations=3, times=12):
    rng = random.Random(seed)
    pairs = [(rng.randrange(entities), rng.randrange(relations), rng.randrange(entities)) for _ in range(25)]
    facts = set()
    for t in range(times):
        for s, r, o in rng.sample(pairs, 12):
            facts.add((s, r, o, t))
        facts.add((rng.randrange(entities), rng.randrange(relations), rng.randrange(entities), t))
    facts = sorted(facts, key=lambda q: (q[3], q[0], q[1], q[2]))
    train = [q for q in facts if q[3] < 8]
    valid = [q for q in facts if 8 <= q[3] < 10]
    test = [q for q in facts if q[3] >= 10]
    return train, valid, test


@pytest.fixture(scope="module")
def dataset():
    return amcen.Dataset.from_facts(*synthetic_facts())


@pytest.fixture(scope="module")
def trained(dataset):
    model = amcen.Model(dataset, SMALL)
    log = model.train()
    return model, log


def test_statistics_match_a_direct_count(dataset):
    stats = dataset.statistics()
    seen = set()
    new = {"train": 0, "valid": 0, "test": 0}
    for split in ("train", "valid", "test"):
        # facts are unique within a timestamp, so marking them seen at once is safe
        for s, r, o, t in getattr(dataset, split):
            new[split] += (s, r, o) not in seen
            seen.add((s, r, o))
    for split in ("train", "valid", "test"):
        assert stats[split]["events"] == len(getattr(dataset, split))
        assert stats[split]["new_events"] == new[split]
    assert stats["granules"] == 12


def test_history_index_counts_earlier_facts_only(dataset):
    index = amcen.HistoryIndex(dataset.entity_count, dataset.relation_count)
    by_time = {}
    for q in dataset.train:
        by_time.setdefault(q[3], []).append(q)
    for t in range(3):
        index.absorb(t, by_time.get(t, []))
    s, r, o, _ = by_time[0][0]
    expected = sum(1 for q in dataset.train if q[:3] == (s, r, o) and q[3] < 3)
    assert index.frequency_vector(s, r, 3)[o] == expected
    assert index.event_label(s, r, o, 3) == 1
    assert index.frontier == 3
    with pytest.raises(amcen.Error):
        index.frequency_vector(s, r, 7)


def test_contrastive_loss_is_the_sum_over_anchors():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(6, 4))
    labels = [0, 1, 1, 0, 1, 0]
    tau = 0.3
    total = 0.0
    for i in range(6):
        others = [a for a in range(6) if a != i]
        positives = [p for p in others if labels[p] == labels[i]]
        denom = math.log(sum(math.exp(v[i] @ v[a] / tau) for a in others))
        total += -sum(v[i] @ v[p] / tau - denom for p in positives) / len(positives)
    assert amcen.contrastive_loss(v, labels, tau) == pytest.approx(total, abs=1e-9)


def test_rank_breaks_ties_towards_lower_ids():
    scores = np.array([0.2, 0.5, 0.5, 0.1])
    assert amcen.rank_of(scores, 2) == 2
    assert amcen.rank_of(scores, 1) == 1
    assert amcen.rank_of(scores, 3) == 4


def test_training_reports_every_epoch(trained):
    _, log = trained
    assert [(e["stage"], e["epoch"]) for e in log] == [(1, 1), (1, 2), (2, 1), (2, 2)]
    assert all(math.isfinite(e["loss"]) for e in log)


def test_evaluation_metrics_are_ordered(trained, dataset):
    model, _ = trained
    result = model.evaluate("test")
    assert len(result["metrics"]) == 6
    for row in result["metrics"]:
        assert 0.0 <= row["hits1"] <= row["hits3"] <= row["hits10"] <= 1.0
    assert len(result["records"]) == 2 * len(dataset.test)


def test_predict_agrees_with_evaluation(trained, dataset):
    model, _ = trained
    s, r, o, t = dataset.test[0]
    p = model.predict(s, r, t, "obj", top_k=3)
    assert len(p["top"]) == 3
    probs = [prob for _, prob in p["top"]]
    assert probs == sorted(probs, reverse=True)
    assert p["predicted_label"] in (0, 1)


def test_checkpoint_round_trip(trained, dataset, tmp_path):
    model, _ = trained
    path = tmp_path / "model.ckpt"
    model.save(path)
    again = amcen.Model.load(path, dataset)
    a, b = model.parameters(), again.parameters()
    assert a.keys() == b.keys()
    for name in a:
        assert np.array_equal(a[name], b[name])
    assert again.evaluate("test")["metrics"] == model.evaluate("test")["metrics"]

    path.write_bytes(b"not a checkpoint")
    with pytest.raises(amcen.CheckpointError):
        amcen.Model.load(path, dataset)


def test_bad_configuration_is_rejected(dataset):
    with pytest.raises(KeyError):
        amcen.Model(dataset, {"dimension": 8})
    with pytest.raises(amcen.ValidationError):
        amcen.Model(dataset, {"lambda": 2.0})
    assert amcen.default_config()["lambda"] == pytest.approx(0.6)
