import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modabs.baselines import (ClusterConfig, CountClassifier, cluster_baseline,
                              count_classifier_baseline, sentence_clusters, tune_cluster)
from modabs.data import Aspect, CorpusSpec, Sample, generate_corpus
from modabs.evaluation import abs_asp_diff


def sample(sentences, k=2, sid="x"):
    return Sample(sid, sentences, [Aspect(f"a{i}", [4]) for i in range(k)])


def test_two_disjoint_vocabularies_give_two_clusters():
    a = [[10, 11, 12], [11, 12, 13], [10, 13, 12]]
    b = [[20, 21, 22], [21, 22, 23]]
    s = sample([a[0], b[0], a[1], b[1], a[2]])
    assert sentence_clusters(s.source_sentences, ClusterConfig(0.9)) == [[0, 2, 4], [1, 3]]
    assert cluster_baseline(s, ClusterConfig(0.9)) == [a[0], b[0]]


def test_identical_sentences_give_one_cluster():
    s = sample([[5, 6, 7]] * 4)
    assert len(cluster_baseline(s, ClusterConfig(0.5))) == 1


def test_too_few_sentences_fall_back_to_one_cluster():
    s = sample([[5, 6, 7]])
    assert cluster_baseline(s, ClusterConfig(0.5, min_cluster_size=3)) == [[5, 6, 7]]


def test_clusters_are_truncated():
    s = sample([[10, 11, 12, 13], [20, 21, 22, 23]])
    out = cluster_baseline(s, ClusterConfig(0.5, max_summary_tokens=2))
    assert out == [[10, 11], [20, 21]]


@given(st.lists(st.lists(st.integers(4, 12), min_size=1, max_size=6), min_size=1, max_size=8),
       st.sampled_from([0.3, 0.6, 0.9, 1.0]))
def test_cluster_count_bounds(sentences, threshold):
    out = cluster_baseline(sample(sentences), ClusterConfig(threshold))
    assert 1 <= len(out) <= len(sentences)


def test_threshold_must_be_positive():
    with pytest.raises(ValueError):
        ClusterConfig(0.0)


def test_grid_of_one_value():
    valid = generate_corpus(CorpusSpec(num_train=0, num_valid=10, num_test=0, seed=1)).valid
    assert tune_cluster(valid, [0.7]).config.distance_threshold == 0.7
    with pytest.raises(ValueError):
        tune_cluster(valid, [])


def test_tuning_attains_grid_minimum():
    valid = generate_corpus(CorpusSpec(num_train=0, num_valid=30, num_test=0, seed=2)).valid
    grid = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0]
    result = tune_cluster(valid, grid)
    exhaustive = {t: np.mean([abs_asp_diff(cluster_baseline(s, ClusterConfig(t)), s.aspect_count)
                              for s in valid]) for t in grid}
    best = min(exhaustive.values())
    assert exhaustive[result.config.distance_threshold] == best
    assert result.config.distance_threshold == min(t for t in grid if exhaustive[t] == best)


def test_degenerate_two_aspect_split():
    a = [[10, 11, 12], [11, 12, 10]]
    b = [[20, 21, 22], [22, 21, 20]]
    valid = [sample([a[0], b[0], a[1], b[1]], k=2, sid=str(i)) for i in range(3)]
    result = tune_cluster(valid, [0.2, 0.5, 0.9])
    assert result.scores[result.config.distance_threshold] == 0.0
    assert len(cluster_baseline(valid[0], result.config)) == 2


# -- count classifier -------------------------------------------------------


def marker_corpus(n, seed):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        k = int(rng.integers(2, 5))
        noise = rng.integers(20, 40, size=8).tolist()
        samples.append(sample([noise + [10 + k]], k=k, sid=str(i)))
    return samples


def test_marker_token_is_learned_perfectly():
    clf = count_classifier_baseline(marker_corpus(60, 0), vocab_size=40, max_aspects=4)
    held_out = marker_corpus(40, 1)
    assert all(clf(s.source) == s.aspect_count for s in held_out)


def test_classifier_loss_never_increases():
    clf = count_classifier_baseline(marker_corpus(60, 0), vocab_size=40, max_aspects=4)
    history = np.array(clf.loss_history)
    assert np.all(np.diff(history) <= 1e-12)
    assert history[-1] < history[0]


def test_featureless_input_predicts_majority():
    train = [sample([[20, 21]], k=3, sid=str(i)) for i in range(7)]
    train += [sample([[20, 21]], k=2, sid=f"b{i}") for i in range(3)]
    clf = count_classifier_baseline(train, vocab_size=30, max_aspects=4)
    assert clf([20, 21]) == 3


def test_absent_class_is_never_predicted():
    clf = CountClassifier(np.zeros((5, 3)), np.array([0.0, 0.0, 9.0]), np.array([2, 3, 4]),
                          np.array([True, True, False]))
    assert clf([1, 2]) in (2, 3)
    trained = count_classifier_baseline(marker_corpus(30, 3)[:1] * 5, 40, 4)
    assert trained.present.sum() == 1
    assert {trained(s.source) for s in marker_corpus(20, 4)} == {marker_corpus(30, 3)[0].aspect_count}


def test_classifier_rejects_out_of_range_counts():
    with pytest.raises(ValueError):
        count_classifier_baseline([sample([[5]], k=5)], 10, 4)
