"""Reference computations that share no code with the package under test."""

import math
import struct

import mpmath


def bits64(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def float64(bits: int) -> float:
    return struct.unpack("<d", struct.pack("<Q", bits))[0]


def mp_softmax(y, dps=50):
    with mpmath.workdps(dps):
        e = [mpmath.exp(mpmath.mpf(v)) for v in y]
        s = mpmath.fsum(e)
        return [float(v / s) for v in e]


def naive_forward(layers, W, b, x):
    """Triple-loop forward pass over plain Python floats.

    ``layers`` is a list of (weights, biases, activation) with weights
    indexed ``[input][output]``.
    """
    h = [float(v) for v in x]
    for lw, lb, act in layers:
        out = []
        for o in range(len(lb)):
            s = 0.0
            for k in range(len(h)):
                s += h[k] * float(lw[k][o])
            s += float(lb[o])
            if act == "relu":
                s = s if s > 0 else 0.0
            elif act == "tanh":
                s = math.tanh(s)
            out.append(s)
        h = out
    y = []
    for j in range(len(b)):
        s = 0.0
        for i in range(len(h)):
            s += h[i] * float(W[i][j])
        y.append(s + float(b[j]))
    mx = max(y)
    e = [math.exp(v - mx) for v in y]
    tot = sum(e)
    return h, y, [v / tot for v in e]


def model_layers(model):
    return [(layer.weights.tolist(), layer.biases.tolist(), layer.activation)
            for layer in model.extractor.layers]
