import numpy as np
import pytest

from bayescall import autodiff as ad
from bayescall.autodiff import GradTape, Tensor
from bayescall.errors import DimensionError, DomainError
from bayescall.network import LstmParams, bilstm_forward, lstm_cell_step

import oracles


def random_lstm(rng, nin, h):
    return LstmParams(Tensor(rng.standard_normal((nin, 4 * h)) * 0.5),
                      Tensor(rng.standard_normal((h, 4 * h)) * 0.5),
                      Tensor(rng.standard_normal(4 * h) * 0.5))


def zero_lstm(nin, h):
    return LstmParams(Tensor(np.zeros((nin, 4 * h))),
                      Tensor(np.zeros((h, 4 * h))),
                      Tensor(np.zeros(4 * h)))


# ---------------------------------------------------------------------------
# cell step


def test_zero_params_zero_state_stay_zero():
    p = zero_lstm(5, 3)
    h2, c2 = lstm_cell_step(np.ones(5), np.zeros(3), np.zeros(3), p)
    np.testing.assert_array_equal(c2.data, np.zeros(3))
    np.testing.assert_array_equal(h2.data, np.zeros(3))


def test_saturated_forget_gate_preserves_cell():
    h = 3
    bias = np.zeros(4 * h)
    bias[h:2 * h] = 20.0    # forget gate ~ 1
    bias[:h] = -20.0        # input gate ~ 0
    p = LstmParams(Tensor(np.zeros((4, 4 * h))), Tensor(np.zeros((h, 4 * h))),
                   Tensor(bias))
    c = np.array([0.3, -0.7, 1.1])
    _, c2 = lstm_cell_step(np.ones(4), np.zeros(h), c, p)
    np.testing.assert_allclose(c2.data, c, rtol=0, atol=1e-6)


def test_cell_matches_scalar_oracle():
    rng = np.random.default_rng(42)
    nin, h = 5, 3
    p = random_lstm(rng, nin, h)
    x, h0, c0 = rng.standard_normal(nin), rng.standard_normal(h), rng.standard_normal(h)
    h2, c2 = lstm_cell_step(x, h0, c0, p)
    ho, co = oracles.lstm_cell(list(x), list(h0), list(c0),
                               p.kernel.data, p.recurrent.data, p.bias.data)
    np.testing.assert_allclose(h2.data, ho, rtol=0, atol=1e-12)
    np.testing.assert_allclose(c2.data, co, rtol=0, atol=1e-12)


def test_cell_batched_rows_are_independent():
    rng = np.random.default_rng(1)
    p = random_lstm(rng, 4, 3)
    xb = rng.standard_normal((2, 4))
    hb = rng.standard_normal((2, 3))
    cb = rng.standard_normal((2, 3))
    h2b, c2b = lstm_cell_step(xb, hb, cb, p)
    for i in range(2):
        h2, c2 = lstm_cell_step(xb[i], hb[i], cb[i], p)
        np.testing.assert_allclose(h2b.data[i], h2.data, atol=1e-14)
        np.testing.assert_allclose(c2b.data[i], c2.data, atol=1e-14)


def test_cell_shape_mismatch():
    p = zero_lstm(5, 3)
    with pytest.raises(DimensionError):
        lstm_cell_step(np.ones(4), np.zeros(3), np.zeros(3), p)
    with pytest.raises(DimensionError):
        lstm_cell_step(np.ones(5), np.zeros(2), np.zeros(3), p)


def test_lstm_step_gradient_matches_finite_differences():
    # spec grad-core oracle: an LSTM-step loss against central differences
    rng = np.random.default_rng(7)
    nin, h = 4, 3
    x = rng.standard_normal(nin)
    h0, c0 = rng.standard_normal(h), rng.standard_normal(h)
    target = rng.standard_normal(h)
    params = {"kernel": rng.standard_normal((nin, 4 * h)) * 0.5,
              "recurrent": rng.standard_normal((h, 4 * h)) * 0.5,
              "bias": rng.standard_normal(4 * h) * 0.5}

    def loss(p):
        lp = LstmParams(p["kernel"], p["recurrent"], p["bias"])
        h2, _ = lstm_cell_step(x, h0, c0, lp)
        diff = ad.add(h2, Tensor(-target))
        return ad.reduce_sum(ad.multiply(diff, diff))

    assert ad.grad_check(loss, params, step=1e-5) < 1e-6


# ---------------------------------------------------------------------------
# bidirectional scan


def test_single_step_equals_two_cell_steps():
    rng = np.random.default_rng(3)
    nin, h = 4, 2
    fwd, bwd = random_lstm(rng, nin, h), random_lstm(rng, nin, h)
    seq = rng.standard_normal((1, nin))
    out = bilstm_forward(seq, fwd, bwd)
    hf, _ = lstm_cell_step(seq[0], np.zeros(h), np.zeros(h), fwd)
    hb, _ = lstm_cell_step(seq[0], np.zeros(h), np.zeros(h), bwd)
    np.testing.assert_allclose(out.data, np.concatenate([hf.data, hb.data])[None, :],
                               atol=1e-14)


def test_reversal_symmetry():
    rng = np.random.default_rng(4)
    nin, h, d = 5, 3, 6
    fwd, bwd = random_lstm(rng, nin, h), random_lstm(rng, nin, h)
    seq = rng.standard_normal((d, nin))
    out = bilstm_forward(seq, fwd, bwd).data
    flipped = bilstm_forward(seq[::-1], bwd, fwd).data
    # reversing input and swapping directions row-reverses and half-swaps
    swapped = np.concatenate([flipped[:, h:], flipped[:, :h]], axis=1)[::-1]
    np.testing.assert_allclose(out, swapped, atol=1e-14)


def test_bilstm_matches_scalar_oracle():
    rng = np.random.default_rng(42)
    nin, h, d = 5, 3, 3
    fwd, bwd = random_lstm(rng, nin, h), random_lstm(rng, nin, h)
    seq = rng.standard_normal((d, nin))
    out = bilstm_forward(seq, fwd, bwd)
    expect = oracles.bilstm(
        seq,
        (fwd.kernel.data, fwd.recurrent.data, fwd.bias.data),
        (bwd.kernel.data, bwd.recurrent.data, bwd.bias.data))
    np.testing.assert_allclose(out.data, expect, rtol=0, atol=1e-12)


def test_trailing_pad_steps_follow_recurrence_not_shortcut():
    # all-zero trailing rows still run through the cell; the oracle defines
    # the expected effect on the final step
    rng = np.random.default_rng(8)
    nin, h, d = 4, 3, 5
    fwd, bwd = random_lstm(rng, nin, h), random_lstm(rng, nin, h)
    seq = rng.standard_normal((d, nin))
    seq[3:] = 0.0
    out = bilstm_forward(seq, fwd, bwd)
    expect = oracles.bilstm(
        seq,
        (fwd.kernel.data, fwd.recurrent.data, fwd.bias.data),
        (bwd.kernel.data, bwd.recurrent.data, bwd.bias.data))
    np.testing.assert_allclose(out.data, expect, rtol=0, atol=1e-12)
    assert np.abs(out.data[-1]).max() > 0  # state does not collapse to zero


def test_empty_sequence_rejected():
    p = zero_lstm(4, 2)
    with pytest.raises((DomainError, DimensionError)):
        bilstm_forward(np.zeros((0, 4)), p, p)


def test_bilstm_gradient_matches_finite_differences():
    rng = np.random.default_rng(12)
    nin, h, d = 3, 2, 4
    seq = rng.standard_normal((d, nin))
    params = {"fk": rng.standard_normal((nin, 4 * h)) * 0.5,
              "fr": rng.standard_normal((h, 4 * h)) * 0.5,
              "fb": rng.standard_normal(4 * h) * 0.5,
              "bk": rng.standard_normal((nin, 4 * h)) * 0.5,
              "br": rng.standard_normal((h, 4 * h)) * 0.5,
              "bb": rng.standard_normal(4 * h) * 0.5}

    def loss(p):
        out = bilstm_forward(seq, LstmParams(p["fk"], p["fr"], p["fb"]),
                             LstmParams(p["bk"], p["br"], p["bb"]))
        return ad.reduce_mean(ad.multiply(out, out))

    assert ad.grad_check(loss, params, step=1e-5) < 1e-6
