import numpy as np
import pytest

from loe_attack import containers
from loe_attack.containers import ContainerError
from loe_attack.oracle import OracleConfig, run_campaign
from loe_attack.transformer import ModelConfig, forward, init_model


def test_model_roundtrip(tmp_path, tiny_model):
    path = tmp_path / "m.pbwt"
    containers.save_model(path, tiny_model)
    back = containers.load_model(path)
    assert back.cfg == tiny_model.cfg
    for a, b in zip(tiny_model.layers, back.layers):
        for k, v in a.__dict__.items():
            np.testing.assert_array_equal(v, getattr(b, k))
    np.testing.assert_array_equal(forward(tiny_model, [1, 2])[0], forward(back, [1, 2])[0])


def test_same_seed_same_bytes(tmp_path, tiny_cfg):
    containers.save_model(tmp_path / "a", init_model(tiny_cfg, 7))
    containers.save_model(tmp_path / "b", init_model(tiny_cfg, 7))
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_declared_shapes(tmp_path):
    cfg = ModelConfig(num_layers=2, d_model=64, num_heads=4, d_ffn=256)
    containers.save_model(tmp_path / "m", init_model(cfg, 0))
    mats, layers, meta = containers.read_weights(tmp_path / "m")
    assert layers == 2 and meta["model"]["d_model"] == 64
    linear = [k for k in mats if ".w_" in k]
    assert len(linear) == 8
    assert mats["L1.w_qkv"].shape == (64, 192) and mats["L0.w_h2"].shape == (256, 64)
    assert mats["L0.ln1_gain"].shape == (1, 64)


def test_header_layout(tmp_path):
    containers.write_weights(tmp_path / "w", {"a": np.array([[1.0, 2.0]])}, 3, {"k": 1})
    raw = (tmp_path / "w").read_bytes()
    assert raw[:4] == b"PBWT"
    assert int.from_bytes(raw[4:6], "little") == 1
    assert int.from_bytes(raw[6:10], "little") == 3
    assert raw[-16:] == np.array([1.0, 2.0], dtype="<f8").tobytes()


def test_bit_exact_values(tmp_path):
    vals = np.array([[np.pi, -0.0, 5e-324, 1e308]])
    containers.write_weights(tmp_path / "w", {"v": vals}, 0)
    back = containers.read_weights(tmp_path / "w")[0]["v"]
    assert back.tobytes() == vals.tobytes()


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-3], lambda b: b + b"\0"])
def test_corrupt_containers(tmp_path, tiny_model, mutate):
    path = tmp_path / "m"
    containers.save_model(path, tiny_model)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(ContainerError):
        containers.load_model(path)


def test_records_roundtrip(tmp_path, tiny_model):
    cfg = tiny_model.cfg
    recs, truths = run_campaign(tiny_model, [[1, 2, 3]] * 3, OracleConfig(layernorm_private=True, seed=2))
    containers.write_records(tmp_path / "q", [(r.query_id, containers.record_fields(r)) for r in recs])
    containers.write_records(tmp_path / "t", [(t.query_id, containers.truth_fields(t)) for t in truths])
    labels = cfg.linear_labels()
    back = containers.records_from_fields(containers.read_records(tmp_path / "q"), labels, cfg.num_layers)
    tback = containers.truths_from_fields(containers.read_records(tmp_path / "t"), labels, cfg.num_layers)
    for a, b in zip(recs, back):
        assert a.query_id == b.query_id
        for label in labels:
            for side in ("inputs", "outputs"):
                x, y = getattr(a, side)[label], getattr(b, side)[label]
                assert (x is None) == (y is None)
                if x is not None:
                    np.testing.assert_array_equal(x, y)
        for aa, bb in zip(a.attn, b.attn):
            for f in ("x", "x_pre", "s", "p", "o"):
                u, v = getattr(aa, f), getattr(bb, f)
                assert (u is None) == (v is None)
                if u is not None:
                    np.testing.assert_array_equal(u, v)
        np.testing.assert_array_equal(a.y, b.y)
    for a, b in zip(truths, tback):
        for label in labels:
            assert a.perm_in[label] == b.perm_in[label] and a.perm_out[label] == b.perm_out[label]
            np.testing.assert_array_equal(a.trace.inputs[label], b.trace.inputs[label])
        assert a.attn_perms == b.attn_perms


def test_records_bad_magic(tmp_path):
    (tmp_path / "q").write_bytes(b"PBWT\x01\x00")
    with pytest.raises(ContainerError):
        containers.read_records(tmp_path / "q")
