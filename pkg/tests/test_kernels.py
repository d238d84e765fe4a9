"""Compiled vs pure-numpy kernel paths."""

import os
import subprocess
import sys

import numpy as np

from vidfuse import accel, kernels
from vidfuse.linalg import RngStream
from vidfuse.lstm import init_lstm_layer


def _random_layer_inputs(seed, steps=7, in_dim=5, hidden=6):
    rng = RngStream(seed)
    layer = init_lstm_layer(in_dim, hidden, rng, scale=0.4, forget_bias=0.7)
    x = rng.normal(size=(steps, in_dim))
    d_hidden = rng.normal(size=(steps, hidden))
    return layer, x, d_hidden


def test_forward_matches_python_impl():
    layer, x, _ = _random_layer_inputs(0)
    fast = kernels.lstm_layer_forward(x, *layer.arrays())
    slow = accel.python_impl(kernels.lstm_layer_forward)(x, *layer.arrays())
    for a, b in zip(fast, slow):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_backward_matches_python_impl():
    layer, x, d_hidden = _random_layer_inputs(1)
    fwd = kernels.lstm_layer_forward(x, *layer.arrays())
    args = (x, *fwd, d_hidden,
            layer.w_xi, layer.w_xf, layer.w_xc, layer.w_xo,
            layer.w_hi, layer.w_hf, layer.w_hc, layer.w_ho,
            layer.w_ci, layer.w_cf, layer.w_co)
    fast = kernels.lstm_layer_backward(*args)
    slow = accel.python_impl(kernels.lstm_layer_backward)(*args)
    for a, b in zip(fast, slow):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_gate_ranges():
    layer, x, _ = _random_layer_inputs(2, steps=20)
    hidden, cells, gi, gf, go, cand = kernels.lstm_layer_forward(x, *layer.arrays())
    for g in (gi, gf, go):
        assert np.all((g > 0.0) & (g < 1.0))
    assert np.all((cand > -1.0) & (cand < 1.0))
    assert np.all((hidden > -1.0) & (hidden < 1.0))


def test_env_flag_selects_pure_numpy():
    """VIDFUSE_DISABLE_NUMBA=1 must turn the kernels into plain functions."""
    code = (
        "from vidfuse import accel, kernels\n"
        "assert accel.NUMBA_ENABLED is False\n"
        "assert not hasattr(kernels.lstm_layer_forward, 'py_func')\n"
        "import numpy as np\n"
        "from vidfuse.lstm import init_lstm_layer\n"
        "from vidfuse.linalg import RngStream\n"
        "rng = RngStream(0)\n"
        "layer = init_lstm_layer(5, 6, rng, scale=0.4, forget_bias=0.7)\n"
        "x = rng.normal(size=(7, 5))\n"
        "out = kernels.lstm_layer_forward(x, *layer.arrays())\n"
        "print(repr(float(out[0].sum())))\n"
    )
    env = dict(os.environ, VIDFUSE_DISABLE_NUMBA="1")
    result = subprocess.run([sys.executable, "-c", code], env=env,
                            capture_output=True, text=True)
    assert result.returncode == 0, result.stderr

    # same computation through the in-process python_impl path
    rng = RngStream(0)
    layer = init_lstm_layer(5, 6, rng, scale=0.4, forget_bias=0.7)
    x = rng.normal(size=(7, 5))
    here = accel.python_impl(kernels.lstm_layer_forward)(x, *layer.arrays())
    reported = float(result.stdout.strip().splitlines()[-1])
    assert abs(reported - float(here[0].sum())) < 1e-9
