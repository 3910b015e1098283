import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import transition_corpus
from crf_labeler.inference import TransitionMatrix, forward_backward, log_partition, path_score, viterbi_decode
from crf_labeler.labeler import (
  CrfModel, collate, load_crf, nll_and_gradient, note_emissions, predict_note, save_crf, sequence_nll_and_gradient,
  train_crf, zero_model,
)
from encoders.classifier import accuracy, predict_lines, train_line_classifier
from encoders.features import extract_features
from encoders.line_encoder import FeatureLinearEncoder, LineEncoder
from encoders.params import EncoderParams, emission_scores
from errors import ConfigError, DimensionMismatch, EmptyNote, EmptyTrainingSet, MissingGold
from models import ClassifierTrainConfig, CrfTrainConfig, FeatureConfig, LabeledNote, LabelSet, Note

SMALL = FeatureConfig(feature_space_size=2 ** 12)


def _random_instance(rng, L: int, K: int) -> tuple[np.ndarray, TransitionMatrix]:
  return rng.normal(size=(L, K)), TransitionMatrix(rng.normal(size=(K, K)), rng.normal(size=K), rng.normal(size=K))


def _all_path_scores(E: np.ndarray, tr: TransitionMatrix) -> tuple[np.ndarray, np.ndarray]:
  L, K = E.shape
  paths = np.array(list(itertools.product(range(K), repeat=L)), dtype=np.int64)
  scores = tr.start_scores[paths[:, 0]] + E[np.arange(L), paths].sum(axis=1) + tr.end_scores[paths[:, -1]]
  if L > 1:
    scores = scores + tr.scores[paths[:, :-1], paths[:, 1:]].sum(axis=1)
  return paths, scores


class TestExactInference:
  """Viterbi and the partition function against path enumeration."""

  def test_against_enumeration(self):
    rng = np.random.default_rng(2024)
    for _ in range(1000):
      L, K = int(rng.integers(1, 7)), int(rng.integers(1, 6))
      E, tr = _random_instance(rng, L, K)
      paths, scores = _all_path_scores(E, tr)
      best = int(np.argmax(scores))
      path, score = viterbi_decode(E, tr)
      assert path == paths[best].tolist()
      assert score == pytest.approx(scores[best], rel=1e-10, abs=1e-10)
      brute = np.logaddexp.reduce(scores)
      assert log_partition(E, tr) == pytest.approx(brute, rel=1e-10)

  def test_ties_pick_lowest_label(self):
    path, score = viterbi_decode(np.zeros((3, 4)), TransitionMatrix.zeros(4))
    assert path == [0, 0, 0]
    assert score == 0.0

  def test_uniform_log_partition(self):
    assert log_partition(np.zeros((2, 3)), TransitionMatrix.zeros(3)) == pytest.approx(2 * math.log(3), abs=1e-12)

  def test_path_score(self):
    E = np.array([[1.0, 2.0], [3.0, 4.0]])
    tr = TransitionMatrix(np.array([[0.1, 0.2], [0.3, 0.4]]), np.array([0.5, 0.6]), np.array([0.7, 0.8]))
    assert path_score(E, tr, [1, 0]) == pytest.approx(0.6 + 2.0 + 0.3 + 3.0 + 0.7)

  def test_marginals(self):
    rng = np.random.default_rng(5)
    E, tr = _random_instance(rng, 5, 3)
    log_z, unary, pairwise = forward_backward(E, tr)
    assert log_z == pytest.approx(log_partition(E, tr))
    assert_allclose(unary.sum(axis=1), np.ones(5))
    assert_allclose(pairwise.sum(axis=2), unary[:-1])
    assert_allclose(pairwise.sum(axis=1), unary[1:])
    paths, scores = _all_path_scores(E, tr)
    probs = np.exp(scores - log_z)
    assert_allclose(unary[2, 1], probs[paths[:, 2] == 1].sum())

  def test_single_line(self):
    E = np.array([[0.0, 1.0, -1.0]])
    path, _ = viterbi_decode(E, TransitionMatrix.zeros(3))
    assert path == [1]
    _, _, pairwise = forward_backward(E, TransitionMatrix.zeros(3))
    assert pairwise.shape == (0, 3, 3)

  def test_shape_errors(self):
    with pytest.raises(EmptyNote):
      viterbi_decode(np.zeros((0, 3)), TransitionMatrix.zeros(3))
    with pytest.raises(DimensionMismatch):
      log_partition(np.zeros((2, 4)), TransitionMatrix.zeros(3))
    with pytest.raises(DimensionMismatch):
      TransitionMatrix(np.zeros((3, 2)), np.zeros(3), np.zeros(3))
    with pytest.raises(DimensionMismatch):
      TransitionMatrix(np.full((2, 2), np.inf), np.zeros(2), np.zeros(2))


class TestLikelihood:
  """Negative log-likelihood and its gradient."""

  def test_uniform_model_nll(self):
    loss, _ = sequence_nll_and_gradient(np.zeros((2, 3)), [0, 2], TransitionMatrix.zeros(3))
    assert loss == pytest.approx(2 * math.log(3), abs=1e-12)

  def test_gradient_matches_finite_differences(self):
    rng = np.random.default_rng(11)
    E, tr = _random_instance(rng, 4, 3)
    gold = [0, 2, 2, 1]
    _, grad = sequence_nll_and_gradient(E, gold, tr)
    eps = 1e-5

    def nll(E_, T_, s_, e_):
      return sequence_nll_and_gradient(E_, gold, TransitionMatrix(T_, s_, e_))[0]

    params = [E, tr.scores, tr.start_scores, tr.end_scores]
    analytic = [grad.emissions, grad.transitions, grad.start_scores, grad.end_scores]
    for which, g in enumerate(analytic):
      numeric = np.zeros_like(params[which])
      for idx in np.ndindex(params[which].shape):
        plus = [p.copy() for p in params]
        minus = [p.copy() for p in params]
        plus[which][idx] += eps
        minus[which][idx] -= eps
        numeric[idx] = (nll(*plus) - nll(*minus)) / (2 * eps)
      assert_allclose(g, numeric, rtol=1e-4, atol=1e-7)

  def test_nll_is_non_negative(self):
    rng = np.random.default_rng(1)
    for _ in range(20):
      E, tr = _random_instance(rng, 3, 4)
      loss, _ = sequence_nll_and_gradient(E, rng.integers(0, 4, size=3), tr)
      assert loss >= -1e-12

  def test_needs_gold(self, small_labels):
    model = zero_model(small_labels, SMALL)
    with pytest.raises(MissingGold):
      nll_and_gradient(model, collate(Note('u', ['Labs: ok']), 100))


class _DenseEncoder(LineEncoder):
  kind = 'dense'

  def __init__(self, X: np.ndarray):
    self.X = X

  @property
  def dim(self) -> int:
    return self.X.shape[1]

  def encode_note(self, lines, tokens=None):
    return self.X[:len(lines)]

  def encode_contexts(self, contexts):
    return self.X[[c.position for c in contexts]]


THREE = LabelSet('three', ('<none>', 'labs', 'imaging'))


class TestCrfProperties:
  """Encoder gradient and score invariants."""

  def test_encoder_weight_gradient(self):
    rng = np.random.default_rng(17)
    X, W = rng.normal(size=(4, 6)), rng.normal(size=(3, 6))
    tr = TransitionMatrix(rng.normal(size=(3, 3)), rng.normal(size=3), rng.normal(size=3))
    note = collate(LabeledNote('d', ['a', 'b', 'c', 'd'], ['<none>', 'imaging', 'imaging', 'labs']), 100)

    def nll(W_):
      return nll_and_gradient(CrfModel(EncoderParams(W_, THREE), tr, _DenseEncoder(X)), note)

    _, grad = nll(W)
    analytic = grad.encoder_weights(X)
    assert analytic.shape == W.shape
    eps = 1e-5
    numeric = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
      plus, minus = W.copy(), W.copy()
      plus[idx] += eps
      minus[idx] -= eps
      numeric[idx] = (nll(plus)[0] - nll(minus)[0]) / (2 * eps)
    assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)

  def test_best_path_probability(self):
    rng = np.random.default_rng(23)
    for _ in range(50):
      E, tr = _random_instance(rng, int(rng.integers(1, 9)), int(rng.integers(1, 6)))
      _, score = viterbi_decode(E, tr)
      p = math.exp(score - log_partition(E, tr))
      assert 0.0 < p <= 1.0 + 1e-12

  def test_best_path_beats_random_paths(self):
    rng = np.random.default_rng(29)
    E, tr = _random_instance(rng, 12, 5)
    _, best = viterbi_decode(E, tr)
    for _ in range(100):
      assert path_score(E, tr, rng.integers(0, 5, size=12)) <= best + 1e-12

  def test_label_order_does_not_change_partition(self):
    rng = np.random.default_rng(31)
    E, tr = _random_instance(rng, 6, 4)
    perm = rng.permutation(4)
    permuted = TransitionMatrix(tr.scores[np.ix_(perm, perm)], tr.start_scores[perm], tr.end_scores[perm])
    assert log_partition(E[:, perm], permuted) == pytest.approx(log_partition(E, tr), rel=1e-12)
    path, score = viterbi_decode(E, tr)
    permuted_path, permuted_score = viterbi_decode(E[:, perm], permuted)
    assert [int(perm[k]) for k in permuted_path] == path
    assert permuted_score == pytest.approx(score, rel=1e-12)

  def test_row_shift(self):
    rng = np.random.default_rng(37)
    E, tr = _random_instance(rng, 5, 3)
    shifted = E.copy()
    shifted[2] += 4.5
    assert log_partition(shifted, tr) == pytest.approx(log_partition(E, tr) + 4.5, rel=1e-12)
    path, score = viterbi_decode(E, tr)
    shifted_path, shifted_score = viterbi_decode(shifted, tr)
    assert shifted_path == path
    assert shifted_score == pytest.approx(score + 4.5, rel=1e-12)

  def test_note_emissions_match_lines(self, small_labels):
    rng = np.random.default_rng(41)
    params = EncoderParams(rng.normal(size=(len(small_labels), SMALL.feature_space_size)), small_labels)
    model = CrfModel(params, TransitionMatrix.zeros(len(small_labels)), FeatureLinearEncoder(SMALL))
    lines = ['Chief Complaint: cough.', 'Labs: WBC 12.4', 'Social History: never smoker.']
    E = note_emissions(model, collate(Note('n', lines), model.max_tokens))
    for i, line in enumerate(lines):
      assert_allclose(E[i], emission_scores(params, extract_features(line, i, len(lines), SMALL)), rtol=1e-12)


class TestCollate:
  """Per-note batching of token lists."""

  def test_shape_fields(self):
    c = collate(LabeledNote('n', ['a b c', 'd'], ['labs', 'labs']), max_tokens=2)
    assert (c.B, c.L, c.S) == (1, 2, 2)
    assert c.lines == [['a', 'b'], ['d']]
    assert c.gold == ['labs', 'labs']

  def test_empty_note(self):
    with pytest.raises(EmptyNote):
      collate(Note('e', []), 100)


class TestCrfTraining:
  """Training, decoding and model files."""

  def test_transitions_beat_line_classifier(self, transition_labels):
    notes = transition_corpus(50)
    train, held = notes[:40], notes[40:]
    gold = [n.labels for n in held]

    crf = train_crf(train, transition_labels, CrfTrainConfig(epochs=15, learning_rate=0.1, seed=0), FeatureLinearEncoder(SMALL))
    crf_acc = accuracy(gold, [predict_note(crf.model, n) for n in held])

    encoder = FeatureLinearEncoder(SMALL)
    examples = [(ctx, label) for n in train for ctx, label in zip(n.contexts(), n.labels)]
    clf = train_line_classifier(examples, transition_labels, ClassifierTrainConfig(epochs=20, learning_rate=0.5, seed=0), encoder)
    clf_acc = accuracy(gold, predict_lines(clf.params, held, encoder))

    assert crf_acc - clf_acc >= 0.05
    assert crf_acc == 1.0

  def test_loss_decreases(self, transition_labels):
    result = train_crf(transition_corpus(10), transition_labels, CrfTrainConfig(epochs=5, learning_rate=0.1), FeatureLinearEncoder(SMALL))
    assert len(result.loss_trace) == 5
    assert result.loss_trace[-1] < result.loss_trace[0] < 3 * math.log(len(transition_labels))

  def test_zero_epochs_gives_zero_model(self, transition_labels):
    result = train_crf(transition_corpus(4), transition_labels, CrfTrainConfig(epochs=0), FeatureLinearEncoder(SMALL))
    assert result.loss_trace == []
    assert not result.model.encoder.weights.any()
    assert not result.model.transitions.scores.any()
    assert predict_note(result.model, Note('x', ['a', 'b'])) == ['<none>', '<none>']

  def test_seeded(self, transition_labels):
    config = CrfTrainConfig(epochs=2, learning_rate=0.1, seed=3)
    a = train_crf(transition_corpus(6), transition_labels, config, FeatureLinearEncoder(SMALL))
    b = train_crf(transition_corpus(6), transition_labels, config, FeatureLinearEncoder(SMALL))
    assert np.array_equal(a.model.encoder.weights, b.model.encoder.weights)
    assert np.array_equal(a.model.transitions.scores, b.model.transitions.scores)

  def test_empty_notes_skipped(self, transition_labels):
    notes = [LabeledNote('e', [], [])] + transition_corpus(2)
    result = train_crf(notes, transition_labels, CrfTrainConfig(epochs=1), FeatureLinearEncoder(SMALL))
    assert len(result.loss_trace) == 1
    with pytest.raises(EmptyTrainingSet):
      train_crf([LabeledNote('e', [], [])], transition_labels, CrfTrainConfig(epochs=1), FeatureLinearEncoder(SMALL))

  def test_save_and_load(self, tmp_path, transition_labels):
    result = train_crf(transition_corpus(6), transition_labels, CrfTrainConfig(epochs=3, learning_rate=0.1), FeatureLinearEncoder(SMALL))
    path = tmp_path / 'crf.json'
    digest = save_crf(path, result.model, SMALL, 'fp', result.loss_trace)
    model, saved = load_crf(path)
    assert saved.engine == 'crf' and saved.loss_trace == pytest.approx(result.loss_trace)
    assert_allclose(model.transitions.scores, result.model.transitions.scores)
    held = transition_corpus(4)
    assert [predict_note(model, n) for n in held] == [predict_note(result.model, n) for n in held]
    assert save_crf(tmp_path / 'again.json', result.model, SMALL, 'fp', result.loss_trace) == digest

  def test_classifier_file_is_not_a_crf(self, tmp_path, small_labels):
    from encoders.serialization import SavedModel, save_model
    save_model(tmp_path / 'clf.json', SavedModel('classifier', EncoderParams.zeros(small_labels, 16), FeatureConfig(feature_space_size=16), 'fp'))
    with pytest.raises(ConfigError):
      load_crf(tmp_path / 'clf.json')

  def test_model_dims_checked(self, small_labels):
    with pytest.raises(ConfigError):
      CrfModel(EncoderParams.zeros(small_labels, 16), TransitionMatrix.zeros(3), FeatureLinearEncoder(FeatureConfig(feature_space_size=16)))
    with pytest.raises(ConfigError):
      CrfModel(EncoderParams.zeros(small_labels, 16), TransitionMatrix.zeros(6), FeatureLinearEncoder(SMALL))
