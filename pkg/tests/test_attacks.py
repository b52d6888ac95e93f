import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import softmax as sp_softmax

from shadowpool.attacks import (
    LiRA, RMIA, ScoreTable, SharedModels, build_attack_dataset, gaussian_loglik, lira_offline,
    lira_online, pia_decide, rmia_score, scaled_logit, scaled_logits_from_logits,
)
from shadowpool.exceptions import InputError, InsufficientModelsError, ShapeError
from shadowpool.pool import ShadowPool


def test_scaled_logit_oracle():
    assert scaled_logit([0.8, 0.2], 0) == pytest.approx(np.log(4.0), abs=1e-12)
    assert scaled_logit([0.5, 0.5], 1) == 0.0
    # clamped, so saturated probabilities stay finite
    assert np.isfinite(scaled_logit([1.0, 0.0], 0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-8, 8), min_size=3, max_size=6), st.integers(0, 2))
def test_logit_form_matches_probability_form(z, label):
    z = np.array(z)
    from_probs = scaled_logit(sp_softmax(z), label)
    from_logits = scaled_logits_from_logits(z[None], np.array([label]))[0]
    assert from_logits == pytest.approx(from_probs, abs=1e-6)


def test_logit_form_survives_saturation():
    z = np.array([[60.0, 0.0, -5.0]])
    s = scaled_logits_from_logits(z, np.array([0]))[0]
    assert s == pytest.approx(60.0 - np.logaddexp(0.0, -5.0))


def test_lira_offline_is_monotone():
    out = [-1.0, 0.0, 1.0]
    vals = [lira_offline(out, t) for t in (-2.0, 0.0, 2.0)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[1] == pytest.approx(0.5)


def test_lira_online_hand_values():
    # IN ~ N(2, 1), OUT ~ N(0, 1)
    assert lira_online([1.0, 3.0], [-1.0, 1.0], 1.0) == pytest.approx(0.0)
    assert lira_online([1.0, 3.0], [-1.0, 1.0], 2.0) == pytest.approx(2.0)


def test_lira_insufficient_models():
    with pytest.raises(InsufficientModelsError):
        lira_offline([1.0], 0.0)
    with pytest.raises(InsufficientModelsError):
        lira_online([1.0], [0.0, 1.0], 0.0)


def _table(scores, membership, labels=None):
    """ScoreTable over 2 classes whose scaled logits equal ``scores``."""
    s = np.asarray(scores, dtype=np.float64)
    k, q = s.shape
    labels = np.zeros(q, dtype=np.int64) if labels is None else np.asarray(labels)
    logits = np.zeros((k, q, 2))
    logits[np.arange(k)[:, None], np.arange(q)[None], labels[None]] = s
    probs = sp_softmax(logits, axis=-1)
    return ScoreTable([f"m{i}" for i in range(k)], np.arange(q), labels, probs, logits, membership)


def test_lira_estimator_matches_scalar_form():
    scores = np.array([[1.0, 0.5], [3.0, -0.5], [-1.0, 2.0], [1.0, 1.0]])
    member = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=bool)
    lira = LiRA(online=True).fit(_table(scores, member))
    got = lira.decision_function(np.array([2.0, 0.0]))
    assert got[0] == pytest.approx(lira_online([1.0, 3.0], [-1.0, 1.0], 2.0))
    assert got[1] == pytest.approx(lira_online([2.0, 1.0], [0.5, -0.5], 0.0))
    off = LiRA(online=False).fit(_table(scores, member))
    assert off.decision_function(np.array([0.0, 0.0]))[0] == pytest.approx(0.5)
    with pytest.raises(ShapeError):
        lira.decision_function(np.zeros(3))


def test_lira_fixed_variance_allows_single_in_model():
    scores = np.array([[2.0], [0.0], [1.0], [-1.0]])
    member = np.array([[1], [0], [0], [0]], dtype=bool)
    with pytest.raises(InsufficientModelsError):
        LiRA(online=True).fit(_table(scores, member))
    lira = LiRA(online=True, fix_variance=True).fit(_table(scores, member))
    # only the OUT group has spread: population std of (0, 1, -1)
    assert lira.std_in_[0] == lira.std_out_[0] == pytest.approx(np.sqrt(2 / 3))
    assert lira.mean_in_[0] == 2.0
    with pytest.raises(InsufficientModelsError):
        LiRA(online=False).fit(_table(scores[:2], member[:2]))


def test_score_table_csv(tmp_path):
    t = _table([[0.25, -1.5]], [[True, False]], labels=[1, 0])
    t.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "model_id,query_id,label,score,membership"
    assert lines[1].split(",")[-1] == "1" and float(lines[1].split(",")[3]) == pytest.approx(0.25)
    with pytest.raises(ShapeError):
        ScoreTable(["a"], [0, 1], [0, 0], np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), np.zeros((2, 2)))


def test_rmia_identical_models_score_one():
    z = np.full(5, 0.4)
    for gamma in (0.5, 1.0):
        assert rmia_score(0.7, [0.7, 0.7], z, np.full((2, 5), 0.4), gamma=gamma) == 1.0
    assert rmia_score(0.7, [0.7, 0.7], z, np.full((2, 5), 0.4), gamma=1.5) == 0.0


def test_rmia_single_population_point():
    # LR(x, z) = (0.8 / 0.4) / (0.5 / 0.5) = 2
    ref_z = np.full((2, 1), 0.5)
    assert rmia_score(0.8, [0.4, 0.4], [0.5], ref_z, gamma=2.0) == 1.0
    assert rmia_score(0.8, [0.4, 0.4], [0.5], ref_z, gamma=2.01) == 0.0


def test_rmia_population_errors():
    with pytest.raises(InputError):
        rmia_score(0.5, [0.5, 0.5], [], np.zeros((2, 0)))
    t = _table([[0.0], [0.0]], [[0], [1]])
    with pytest.raises(InputError):
        RMIA().fit(t, t)


def test_rmia_offline_uses_out_models_only():
    ref_z = np.full((2, 1), 0.5)
    # the IN model (0.9) must be ignored: OUT mean 0.4 -> pbar = 0.5 * (1.3 * 0.4 + 0.7) = 0.61
    s = rmia_score(0.61, [0.9, 0.4], [0.5], ref_z, mode="offline", a=0.3, gamma=1.0,
                   ref_q_member=[True, False])
    assert s == 1.0


def test_pia_tie_goes_to_first_value():
    conf = np.array([[0.2, 0.8], [0.4, 0.6]])
    choice, l0, l1 = pia_decide(conf, conf.copy(), conf.mean(axis=0))
    assert choice == 0 and l0 == l1
    choice, _, _ = pia_decide(conf, conf + 0.5, conf.mean(axis=0) + 0.5)
    assert choice == 1


def test_gaussian_loglik_oracle():
    conf = np.array([[0.0], [2.0]])
    expected = -0.5 * np.log(2 * np.pi)  # N(1, 1) at 1
    assert gaussian_loglik(conf, [1.0]) == pytest.approx(expected)


def test_build_attack_dataset_membership_matches_pool(blobs):
    pool = ShadowPool(n_experts=2, n_layers=2, stem_widths=(8,), expert_width=6, epochs=2,
                      n_shared=3, ft_epochs=1, random_state=0).fit(blobs)
    table = build_attack_dataset([SharedModels(pool, list(pool.aligned_set_))], blobs)
    assert table.n_models == 3
    for k, w in enumerate(pool.aligned_set_):
        assert table.membership[k].tolist() == [pool.member_of(i, w) for i in blobs.ids]
    with pytest.raises(InputError):
        build_attack_dataset([], blobs)


def test_label_shuffle_null_is_near_chance():
    from shadowpool.metrics import auc_score
    rng = np.random.default_rng(0)
    k, q = 8, 400
    scores = rng.standard_normal((k, q))
    member = np.zeros((k, q), dtype=bool)
    member[rng.integers(0, k, q), np.arange(q)] = True
    lira = LiRA(online=True, fix_variance=True).fit(_table(scores, member))
    target = rng.standard_normal(q)
    truth = rng.permutation(np.arange(q) % 2 == 0)
    assert abs(auc_score(lira.decision_function(target), truth) - 0.5) < 0.08
