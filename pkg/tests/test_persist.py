import json

import numpy as np
import pytest

from shadowpool.data import gen_property_tabular
from shadowpool.exceptions import FormatVersionError, ParseError
from shadowpool.persist import (
    load_checkpoint, load_dataset_csv, load_pool, load_shadow_model, save_checkpoint,
    save_dataset_csv, save_pool, save_shadow_model,
)
from shadowpool.pool import ShadowPool
from shadowpool.shadow import ShadowModel


def test_csv_round_trip_is_bit_exact(tmp_path, blobs):
    save_dataset_csv(blobs, tmp_path / "d.csv")
    back = load_dataset_csv(tmp_path / "d.csv", n_classes=3)
    assert back.features.tobytes() == blobs.features.tobytes()
    assert np.array_equal(back.labels, blobs.labels) and np.array_equal(back.ids, blobs.ids)


def test_csv_keeps_property_column(tmp_path):
    d = gen_property_tabular(1, 50, 3, 0.4)
    save_dataset_csv(d, tmp_path / "p.csv")
    assert np.array_equal(load_dataset_csv(tmp_path / "p.csv").property_flags, d.property_flags)


def test_csv_parse_error_reports_line_and_field(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,f0,f1,label\n0,1.0,2.0,1\n1,1.0,oops,0\n")
    with pytest.raises(ParseError) as err:
        load_dataset_csv(p)
    assert err.value.line == 3 and err.value.field == "f1"
    p.write_text("id,f0,label\n0,1.0\n")
    with pytest.raises(ParseError) as err:
        load_dataset_csv(p)
    assert err.value.line == 2


def test_checkpoint_checksum_detects_tampering(tmp_path):
    d = save_checkpoint(tmp_path / "c", "thing", {"w": np.arange(6.0).reshape(2, 3)}, {"seed": 4})
    meta, t = load_checkpoint(d, "thing")
    assert meta == {"seed": 4} and t["w"].shape == (2, 3)
    raw = bytearray((d / "w.bin").read_bytes())
    raw[0] ^= 1
    (d / "w.bin").write_bytes(bytes(raw))
    with pytest.raises(ParseError, match="checksum"):
        load_checkpoint(d)


def test_checkpoint_version_and_kind(tmp_path):
    d = save_checkpoint(tmp_path / "c", "thing", {"i": np.arange(3)}, {})
    with pytest.raises(ParseError):
        load_checkpoint(d, "other")
    m = json.loads((d / "manifest.json").read_text())
    m["version"] = 99
    (d / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(FormatVersionError):
        load_checkpoint(d)


def test_shadow_model_round_trip(tmp_path, blobs):
    m = ShadowModel(stem_widths=(6,), expert_width=5, n_layers=2, epochs=2).fit(blobs)
    back = load_shadow_model(save_shadow_model(m, tmp_path / "m"))
    assert back.predict_proba(blobs.features).tobytes() == m.predict_proba(blobs.features).tobytes()
    assert np.array_equal(back.membership(blobs.ids), m.membership(blobs.ids))
    assert back.ledger_.get("train") == m.ledger_.get("train")


def test_pool_round_trip(tmp_path, blobs):
    pool = ShadowPool(n_experts=2, n_layers=2, stem_widths=(6,), expert_width=5, epochs=2,
                      n_shared=2, ft_epochs=1, random_state=3).fit(blobs)
    back = load_pool(save_pool(pool, tmp_path / "p"))
    for w in range(pool.n_pathways_):
        assert (back.predict_proba(blobs.features, pathway=w).tobytes()
                == pool.predict_proba(blobs.features, pathway=w).tobytes())
    assert back.aligned_set_ == pool.aligned_set_
    for w in pool.aligned_set_:
        assert back.membership_matrix([w], blobs.ids).tolist() == pool.membership_matrix([w], blobs.ids).tolist()
