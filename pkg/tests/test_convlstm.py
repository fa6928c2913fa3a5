import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vfusion.convlstm import ConvLSTMState, convlstm_step, convlstm_unroll, init_convlstm
from vfusion.tensor import no_grad

from conftest import TOL, dtensor, grad_errors, weighted_sum
from gradient_suite import cell_tensors, random_cell
from oracles import scalar_cell, scalar_lstm, scalar_map


def test_scalar_step_matches_oracle(rng):
    for _ in range(10):
        params, w = scalar_cell(rng)
        x, h0, c0 = rng.uniform(-2, 2, size=3)
        out = convlstm_step(scalar_map(x), ConvLSTMState(scalar_map(h0), scalar_map(c0)), params)
        h_ref, c_ref = scalar_lstm(x, h0, c0, w)
        assert abs(out.H.item() - h_ref) < 1e-12
        assert abs(out.C.item() - c_ref) < 1e-12


def test_scalar_three_step_unroll_matches_oracle(rng):
    for _ in range(10):
        params, w = scalar_cell(rng)
        xs = rng.uniform(-2, 2, size=3)
        final = convlstm_unroll([scalar_map(v) for v in xs], params)
        h, c = 0.0, 0.0
        for v in xs:
            h, c = scalar_lstm(v, h, c, w)
        assert abs(final.H.item() - h) < 1e-12
        assert abs(final.C.item() - c) < 1e-12


def _zero_cell(c_in=3, hidden=4, spatial=(5, 5)):
    p = init_convlstm(c_in, hidden, spatial, np.random.default_rng(0), np.float64, forget_bias=0.0)
    for t in cell_tensors(p):
        t.data[...] = 0
    return p


def test_zero_parameters_give_half_gates_and_zero_state(rng):
    p = _zero_cell()
    gates = {}
    out = convlstm_step(dtensor(rng.standard_normal((3, 5, 5))), ConvLSTMState.zeros(4, (5, 5), dtype=np.float64),
                        p, gates)
    for g in "ifo":
        np.testing.assert_array_equal(gates[g].data, 0.5)
    np.testing.assert_array_equal(out.C.data, 0)
    np.testing.assert_array_equal(out.H.data, 0)


def test_zero_parameters_unroll_stays_zero(rng):
    p = _zero_cell()
    seq = [dtensor(10 * rng.standard_normal((3, 5, 5))) for _ in range(7)]
    np.testing.assert_array_equal(convlstm_unroll(seq, p).H.data, 0)


def test_length_one_unroll_equals_step(rng):
    p = random_cell(rng)
    x = dtensor(rng.standard_normal((2, 3, 3)))
    a = convlstm_unroll([x], p)
    b = convlstm_step(x, ConvLSTMState.zeros(2, (3, 3), dtype=np.float64), p)
    np.testing.assert_array_equal(a.H.data, b.H.data)
    np.testing.assert_array_equal(a.C.data, b.C.data)


def test_unroll_accepts_stacked_tensor(rng):
    p = random_cell(rng)
    seq = rng.standard_normal((4, 2, 3, 3))
    a = convlstm_unroll(dtensor(seq), p)
    b = convlstm_unroll([dtensor(s) for s in seq], p)
    np.testing.assert_array_equal(a.H.data, b.H.data)


def test_batched_unroll_matches_per_sample(rng):
    p = random_cell(rng)
    seq = rng.standard_normal((3, 4, 2, 3, 3))  # T, N, C, h, w
    batched = convlstm_unroll(dtensor(seq), p).H.data
    for n in range(4):
        single = convlstm_unroll(dtensor(seq[:, n]), p).H.data
        np.testing.assert_allclose(batched[n], single, rtol=1e-13, atol=1e-14)


def test_step_rejects_spatial_mismatch(rng):
    p = random_cell(rng)
    with pytest.raises(ValueError):
        convlstm_step(dtensor(np.zeros((2, 4, 4))), ConvLSTMState.zeros(2, (3, 3), dtype=np.float64), p)
    with pytest.raises(ValueError):
        convlstm_step(dtensor(np.zeros((5, 3, 3))), ConvLSTMState.zeros(2, (3, 3), dtype=np.float64), p)


def test_unroll_rejects_empty_and_ragged(rng):
    p = random_cell(rng)
    with pytest.raises(ValueError):
        convlstm_unroll([], p)
    with pytest.raises(ValueError):
        convlstm_unroll([dtensor(np.zeros((2, 3, 3))), dtensor(np.zeros((2, 4, 4)))], p)


def test_peepholes_are_full_spatial_tensors():
    p = init_convlstm(512, 256, (6, 6), np.random.default_rng(0), np.float32)
    for g in "ifo":
        assert p.w_c[g].shape == (256, 6, 6)
        assert not p.w_c[g].data.any()
    assert p.w_x["c"].shape == (256, 512, 3, 3) and p.w_h["o"].shape == (256, 256, 3, 3)
    np.testing.assert_array_equal(p.b["f"].data, 1.0)
    np.testing.assert_array_equal(p.b["i"].data, 0.0)


def test_step_gradient_every_group_two_channel_3x3(rng):
    p = random_cell(rng)
    x = dtensor(rng.standard_normal((2, 3, 3)))
    state = ConvLSTMState(dtensor(0.5 * rng.standard_normal((2, 3, 3))), dtensor(rng.standard_normal((2, 3, 3))))
    w = np.ones((2, 3, 3))
    errs = grad_errors(lambda: weighted_sum(convlstm_step(x, state, p).H, w), cell_tensors(p))
    assert max(errs) < TOL


@pytest.mark.parametrize("length", [1, 2, 3, 4])
def test_bptt_matches_finite_differences(length):
    r = np.random.default_rng(length)
    p = random_cell(r)
    seq = [dtensor(r.standard_normal((2, 3, 3))) for _ in range(length)]
    errs = grad_errors(lambda: weighted_sum(convlstm_unroll(seq, p).H, np.ones((2, 3, 3))), seq + cell_tensors(p))
    assert max(errs) < TOL


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 3.0))
def test_hidden_bounded_and_gates_in_unit_interval(seed, scale):
    r = np.random.default_rng(seed)
    p = random_cell(r)
    for t in cell_tensors(p):
        t.data *= scale
    state = ConvLSTMState.zeros(2, (3, 3), dtype=np.float64)
    with no_grad():
        for _ in range(3):
            gates = {}
            state = convlstm_step(dtensor(scale * r.standard_normal((2, 3, 3))), state, p, gates)
            assert np.all(np.abs(state.H.data) < 1)
            for g in "ifo":
                assert np.all((gates[g].data > 0) & (gates[g].data < 1))
            assert state.H.shape == (2, 3, 3)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), bias=st.floats(-3.0, 3.0))
def test_zero_input_recurrence_stays_bounded(seed, bias):
    r = np.random.default_rng(seed)
    p = random_cell(r)
    for t in list(p.w_x.values()) + list(p.w_c.values()):
        t.data[...] = 0
    for t in p.b.values():
        t.data[...] = bias + r.standard_normal(t.shape)
    # |H| < 1, so the forget pre-activation never exceeds b_f + (2 channels * 9 taps) * max|W_hf|
    f = 1 / (1 + np.exp(-(p.b["f"].data.max() + 18 * np.abs(p.w_h["f"].data).max())))
    state = ConvLSTMState.zeros(2, (3, 3), dtype=np.float64)
    zero = dtensor(np.zeros((2, 3, 3)), grad=False)
    norms = []
    with no_grad():
        for _ in range(100):
            state = convlstm_step(zero, state, p)
            norms.append(np.abs(state.C.data).max())
    assert np.all(np.isfinite(norms))
    # |C_t| <= f|C_{t-1}| + 1 with f < 1 gives the geometric bound 1 / (1 - f)
    assert max(norms) <= 1 / (1 - f) + 1e-9
