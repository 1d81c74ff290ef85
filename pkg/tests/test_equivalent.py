import numpy as np
import pytest

from loe_attack.equivalent import (
    expected_qk, expected_vo_blocks, qk_systems_oracle, recover_qk, recover_vo, vo_block_l1, vo_records_aligned,
    vo_records_oracle,
)
from loe_attack.extract import ExtractionError, solve_vo
from loe_attack.fxp import FxpConfig
from loe_attack.oracle import OracleConfig, run_campaign
from loe_attack.transformer import ModelConfig, init_model


@pytest.fixture(scope="module")
def attn_model():
    return init_model(ModelConfig(num_layers=1, d_model=8, num_heads=2, d_ffn=32, vocab_size=64), 0)


@pytest.fixture(scope="module")
def float_campaign(attn_model):
    rng = np.random.default_rng(5)
    prompts = [list(rng.integers(0, 64, size=4)) for _ in range(160)]
    return run_campaign(attn_model, prompts, OracleConfig(fxp=None, seed=1))


def test_vo_float_exact(attn_model, float_campaign):
    recs, truths = float_campaign
    eq = recover_vo(vo_records_oracle(recs, truths, 0), attn_model)
    assert eq.gauge_fixed
    assert max(vo_block_l1(eq, expected_vo_blocks(attn_model, truths[0], 0))) <= 1e-10


def test_vo_minimum_norm_differs_only_by_gauge(attn_model, float_campaign):
    recs, truths = float_campaign
    triples = vo_records_oracle(recs, truths, 0)
    raw = solve_vo(triples)
    exp = expected_vo_blocks(attn_model, truths[0], 0)
    # the blocks individually are off, their effect on outputs is not
    assert min(vo_block_l1(raw, exp)) > 1e-4
    from loe_attack.extract import vo_input
    X = np.stack([vo_input(p, xp) for p, xp, _ in triples])
    np.testing.assert_allclose(X @ raw.w_vo, X @ np.concatenate(exp), atol=1e-10)


def test_qk_float_exact(attn_model, float_campaign):
    recs, truths = float_campaign
    for h in range(2):
        ex = recover_qk(recs, truths, attn_model, 0, h)
        assert np.abs(ex.w - expected_qk(attn_model, truths[0], 0, h)).mean() <= 1e-10
        assert ex.retained_rank == 64


def test_qk_system_shapes(float_campaign):
    recs, truths = float_campaign
    systems = qk_systems_oracle(recs[:3], truths[:3], 0, 1)
    assert [s[0].shape for s in systems] == [(4, 64)] * 3


def test_vo_value_aligned_fxp(attn_model):
    recs, truths = run_campaign(attn_model, [[5, 17, 42, 33]] * 512, OracleConfig(fxp=FxpConfig(), seed=1))
    triples, order = vo_records_aligned(recs, 0)
    assert sorted(order) == [0, 1, 2, 3]
    eq = recover_vo(triples, attn_model)
    assert not eq.gauge_fixed
    assert max(vo_block_l1(eq, expected_vo_blocks(attn_model, truths[0], 0))) < 0.5


def test_requires_revealed_attention(attn_model):
    recs, truths = run_campaign(attn_model, [[1, 2]] * 20, OracleConfig(layernorm_private=True, seed=1))
    with pytest.raises(ValueError):
        vo_records_aligned(recs, 0)
    with pytest.raises(ValueError):
        qk_systems_oracle(recs, truths, 0, 0)


def test_qk_large_model_gated():
    model = init_model(ModelConfig(num_layers=1, d_model=16, num_heads=2, d_ffn=32, vocab_size=64), 0)
    recs, truths = run_campaign(model, [[1, 2, 3]] * 4, OracleConfig(fxp=None, seed=1))
    with pytest.raises(ExtractionError):
        recover_qk(recs, truths, model, 0, 0)
