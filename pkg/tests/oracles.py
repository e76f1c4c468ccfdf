"""Independent scalar-loop reference implementations used as test oracles.

Everything here is written with plain Python floats and explicit loops so
it shares no code path with the vectorized implementations it checks.
"""

import math

import numpy as np


def sigmoid(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def lstm_cell(x, h, c, kernel, recurrent, bias):
    """One LSTM cell step on Python lists; gate order (i, f, g, o)."""
    nin, nh = len(x), len(h)
    z = [
        sum(x[a] * kernel[a][j] for a in range(nin))
        + sum(h[a] * recurrent[a][j] for a in range(nh))
        + bias[j]
        for j in range(4 * nh)
    ]
    i = [sigmoid(z[j]) for j in range(nh)]
    f = [sigmoid(z[nh + j]) for j in range(nh)]
    g = [math.tanh(z[2 * nh + j]) for j in range(nh)]
    o = [sigmoid(z[3 * nh + j]) for j in range(nh)]
    c2 = [f[j] * c[j] + i[j] * g[j] for j in range(nh)]
    h2 = [o[j] * math.tanh(c2[j]) for j in range(nh)]
    return h2, c2


def lstm_scan(seq, kernel, recurrent, bias, reverse=False):
    """Hidden states per step position for one scan direction."""
    nh = len(recurrent)
    d = len(seq)
    h = [0.0] * nh
    c = [0.0] * nh
    states = [None] * d
    order = range(d - 1, -1, -1) if reverse else range(d)
    for t in order:
        h, c = lstm_cell(list(seq[t]), h, c, kernel, recurrent, bias)
        states[t] = h
    return states


def bilstm(seq, fwd_params, bwd_params):
    """Concatenated [d, 2h] output of a bidirectional scan."""
    fs = lstm_scan(seq, *fwd_params, reverse=False)
    bs = lstm_scan(seq, *bwd_params, reverse=True)
    return np.array([fs[t] + bs[t] for t in range(len(seq))])


def softmax2(a: float, b: float) -> tuple[float, float]:
    m = max(a, b)
    ea, eb = math.exp(a - m), math.exp(b - m)
    s = ea + eb
    return ea / s, eb / s


def cross_entropy(logits, labels) -> float:
    """Mean -log softmax(logits)[label] over rows, scalar-loop."""
    total = 0.0
    for (a, b), y in zip(logits, labels):
        p = softmax2(a, b)[int(y)]
        total += -math.log(p)
    return total / len(labels)
