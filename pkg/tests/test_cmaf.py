"""Cross-modality attention fusion: aggregation, projection, attention and gating."""

import copy

import pytest
import torch
from hypothesis import given, settings, strategies as st

from claire.cmaf import CMAF, DualAttention, MultiScaleAggregate, cmaf_forward, dual_attention, gated_sum
from claire.errors import ConfigError
from claire.harness.gradcheck import check_cmaf

pytestmark = pytest.mark.usefixtures("float64")


def _zero_biases(module):
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, torch.nn.Conv2d) and m.bias is not None:
                m.bias.zero_()


def _cmaf(c=4, seed=0):
    torch.manual_seed(seed)
    return CMAF(c, reduction=2).eval()


# -- multiscale aggregation ------------------------------------------------

def test_aggregate_zero_weights_gives_bias_map():
    agg = MultiScaleAggregate(3)
    with torch.no_grad():
        for conv in list(agg.branches) + [agg.agg]:
            conv.weight.zero_()
    out = agg(torch.randn(2, 3, 5, 5))
    w = agg.agg.bias[None, :, None, None]
    expected = w + torch.zeros_like(out)
    # branch biases enter through the zeroed 1x1 merge, so only its bias remains
    assert torch.allclose(out, expected, atol=0)


def test_aggregate_engineered_identity():
    c = 3
    agg = MultiScaleAggregate(c)
    with torch.no_grad():
        for conv in list(agg.branches) + [agg.agg]:
            conv.weight.zero_()
            conv.bias.zero_()
        agg.branches[0].weight[:, :, 0, 0] = torch.eye(c)
        agg.agg.weight[:, :c, 0, 0] = torch.eye(c)
    f = torch.randn(2, c, 6, 6)
    assert torch.equal(agg(f), f)


# -- cross projection ------------------------------------------------------

def test_projection_zero_weights_and_wiring():
    m = _cmaf()
    with torch.no_grad():
        m.proj_o2s.weight.zero_()
    f_o, f_s = torch.randn(1, 4, 4, 4), torch.randn(1, 4, 4, 4)
    _, _, st1 = m(f_o, f_s)
    assert torch.allclose(st1.p_o2s, m.proj_o2s.bias[None, :, None, None].expand_as(st1.p_o2s))
    # O->S projection consumes only optical features
    _, _, st2 = _cmaf()(f_o, torch.randn(1, 4, 4, 4))
    _, _, st3 = _cmaf()(f_o, f_s)
    assert torch.equal(st2.p_o2s, st3.p_o2s)
    assert not torch.equal(st2.p_s2o, st3.p_s2o)
    assert torch.isfinite(st3.p_o2s).all()


# -- dual attention ----------------------------------------------------------

def test_dual_attention_zero_input():
    att = DualAttention(4, 2)
    assert torch.equal(dual_attention(torch.zeros(1, 4, 3, 3), att), torch.zeros(1, 4, 3, 3))


def test_dual_attention_saturated_gates_pass_through():
    att = DualAttention(4, 2)
    with torch.no_grad():
        att.channel.fc1.weight.fill_(1.0)
        att.channel.fc2.weight.fill_(1e4)
        att.spatial.conv.weight.zero_()
        att.spatial.conv.bias.fill_(1e4)
    p = torch.rand(2, 4, 3, 3) + 0.1
    wc, ws = att.gates(p)
    assert torch.equal(wc, torch.ones_like(wc)) and torch.equal(ws, torch.ones_like(ws))
    assert torch.equal(att(p), p)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_dual_attention_shrinks_non_negative_input(seed):
    torch.manual_seed(seed)
    att = DualAttention(6, 3)
    p = torch.rand(2, 6, 4, 4) * 5
    assert bool((att(p).abs() <= p.abs()).all())


# -- full module -------------------------------------------------------------

def test_forced_optical_gate_ignores_sar():
    m = _cmaf()
    f_o = torch.randn(2, 4, 4, 4)
    fused, g, state = cmaf_forward(m, f_o, torch.randn(2, 4, 4, 4), force_gates=(1.0, 0.0))
    assert torch.equal(fused, m.fuse(state.mhat_o))
    # the enhanced SAR branch drops out of the fusion input entirely
    assert torch.equal(gated_sum(g, state.mhat_o, state.mhat_s * 7 + 1), state.mhat_o)
    assert torch.equal(g[:, 0], torch.ones(2, 4, 4)) and torch.equal(g[:, 1], torch.zeros(2, 4, 4))


def test_symmetric_parameters_give_symmetric_branches():
    m = _cmaf()
    for a, b in (("agg_s", "agg_o"), ("proj_o2s", "proj_s2o"), ("att_s", "att_o"), ("enh_s", "enh_o")):
        setattr(m, a, copy.deepcopy(getattr(m, b)))
    f = torch.randn(2, 4, 4, 4)
    fused, g, state = m(f, f.clone())
    assert torch.equal(state.mhat_o, state.mhat_s)
    assert torch.allclose(fused, m.fuse((g[:, :1] + g[:, 1:]) * state.mhat_o), atol=1e-13)


def test_zero_inputs_zero_biases_give_zero_output():
    m = _cmaf()
    _zero_biases(m)
    fused, _, _ = m(torch.zeros(1, 4, 3, 3), torch.zeros(1, 4, 3, 3))
    assert torch.equal(fused, torch.zeros(1, 4, 3, 3))


def test_gating_is_linear_in_enhanced_features():
    m = _cmaf()
    _, g, state = m(torch.randn(2, 4, 4, 4), torch.randn(2, 4, 4, 4))
    delta = torch.randn_like(state.mhat_o)
    diff = gated_sum(g, state.mhat_o + delta, state.mhat_s) - gated_sum(g, state.mhat_o, state.mhat_s)
    assert torch.allclose(diff, g[:, :1] * delta, atol=1e-13)


def test_zeroed_sar_leaves_optical_aggregate_unchanged():
    m = _cmaf()
    f_o = torch.randn(1, 4, 4, 4)
    _, _, full = m(f_o, torch.randn(1, 4, 4, 4))
    _, _, ablated = m(f_o, torch.zeros(1, 4, 4, 4))
    assert torch.equal(full.m_o, ablated.m_o)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 50))
def test_gates_in_unit_interval_and_shape_preserved(seed, scale):
    torch.manual_seed(seed)
    m = CMAF(4, 2).eval()
    f_o, f_s = torch.randn(2, 4, 3, 5) * scale, torch.randn(2, 4, 3, 5) * scale
    fused, g, _ = m(f_o, f_s)
    assert g.shape == (2, 2, 3, 5) and fused.shape == f_o.shape
    assert bool((g >= 0).all() and (g <= 1).all())
    assert torch.isfinite(fused).all()


def test_shape_mismatch_is_config_error():
    m = _cmaf()
    with pytest.raises(ConfigError):
        m(torch.zeros(1, 4, 4, 4), torch.zeros(1, 4, 2, 2))
    with pytest.raises(ConfigError):
        m(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 4))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cmaf_gradients_match_finite_differences(seed):
    assert check_cmaf(seed) < 1e-3
