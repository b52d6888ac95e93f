import numpy as np
import pytest

from shadowpool.exceptions import InputError
from shadowpool.shadow import (
    MaskSpec, ShadowModel, accuracy, augment_model, augment_with_guardrail, mask_scope,
)


@pytest.fixture
def model(blobs):
    return ShadowModel(stem_widths=(8,), expert_width=8, n_layers=2, epochs=40, random_state=1).fit(blobs)


def test_fit_records_membership(model, blobs):
    assert model.member_of(int(blobs.ids[0]))
    assert not model.member_of(10**6)
    assert model.membership(blobs.ids).all()


def test_zero_mask_is_identity(model):
    for scope in ("fc", "conv"):
        aug = augment_model(model, MaskSpec(scope, 0.0, seed=3))
        assert aug.same_weights(model)


def test_augment_leaves_base_untouched(model):
    before = [l.weight.copy() for l in model.layers_]
    a = augment_model(model, MaskSpec("conv", 0.5, seed=1))
    b = augment_model(model, MaskSpec("conv", 0.5, seed=2))
    assert all(np.array_equal(x, l.weight) for x, l in zip(before, model.layers_))
    assert not a.same_weights(b)


def test_mask_scopes(model):
    assert mask_scope(model, "fc") == [len(model.layers_) - 1]
    assert mask_scope(model, "conv") == [1, 2]
    aug = augment_model(model, MaskSpec("fc", 1.0))
    assert not aug.layers_[-1].weight.any()
    assert np.array_equal(aug.layers_[0].weight, model.layers_[0].weight)


def test_full_prune_rate_close_to_p(model):
    aug = augment_model(model, MaskSpec("conv", 0.3, seed=0))
    zeros = sum((a.weight == 0).sum() for a in (aug.layers_[i] for i in mask_scope(aug, "conv")))
    total = sum(aug.layers_[i].weight.size for i in mask_scope(aug, "conv"))
    assert zeros / total == pytest.approx(0.3, abs=0.08)


def test_guardrail_rejects_destructive_mask(model, blobs):
    with pytest.raises(InputError):
        augment_with_guardrail(model, MaskSpec("fc", 1.0), blobs.features, blobs.labels)
    ok = augment_with_guardrail(model, MaskSpec("fc", 0.0), blobs.features, blobs.labels)
    assert accuracy(ok, blobs.features, blobs.labels) == accuracy(model, blobs.features, blobs.labels)


def test_mask_spec_validation():
    with pytest.raises(InputError):
        MaskSpec("attn", 0.1)
    with pytest.raises(InputError):
        MaskSpec("fc", 1.5)
    assert MaskSpec("fc", 0.1).label == "FC-0.1"


def test_cost_counts_layer_evaluations(blobs):
    m = ShadowModel(stem_widths=(8,), expert_width=8, n_layers=2, epochs=3, batch_size=32).fit(blobs)
    # 4 layers, forward + backward, every example every epoch
    assert m.ledger_.evaluations("train") == 3 * len(blobs) * 4 * 2
