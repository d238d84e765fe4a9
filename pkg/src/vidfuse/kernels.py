"""Hot inner loops of the recurrent models.

Both kernels walk a single sequence one time step at a time, which is the
part of training that dominates runtime; everything around them (softmax
head, batching, parameter updates) is ordinary vectorized numpy. The
functions are written in numba-compatible numpy so the same source serves
as the compiled fast path and the pure-numpy fallback (see
:mod:`vidfuse.accel`).

Gate layout per step t, with x the layer input and (h, c) the recurrent
state entering the step:

    i = sigmoid(w_xi x + w_hi h + w_ci * c + b_i)        input gate
    f = sigmoid(w_xf x + w_hf h + w_cf * c + b_f)        forget gate
    g = tanh   (w_xc x + w_hc h + b_c)                   cell candidate
    c' = f * c + i * g
    o = sigmoid(w_xo x + w_ho h + w_co * c' + b_o)       output gate (peeks at c')
    h' = o * tanh(c')

The cell-to-gate weights (w_ci, w_cf, w_co) are per-unit (diagonal)
peephole connections, hence elementwise products.
"""

import numpy as np

from .accel import maybe_jit


@maybe_jit
def sigmoid_vec(a):
    """Overflow-safe elementwise logistic function."""
    z = np.exp(-np.abs(a))
    return np.where(a >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


@maybe_jit
def lstm_layer_forward(
    x_seq,
    w_xi, w_xf, w_xc, w_xo,
    w_hi, w_hf, w_hc, w_ho,
    w_ci, w_cf, w_co,
    b_i, b_f, b_c, b_o,
):
    """Run one layer over a T x input_dim sequence from zero initial state.

    Returns (hidden, cells, gate_i, gate_f, gate_o, cand), each T x H. The
    gate and candidate activations are kept for backpropagation through
    time.
    """
    steps = x_seq.shape[0]
    n_hidden = w_xi.shape[0]
    hidden = np.empty((steps, n_hidden))
    cells = np.empty((steps, n_hidden))
    gate_i = np.empty((steps, n_hidden))
    gate_f = np.empty((steps, n_hidden))
    gate_o = np.empty((steps, n_hidden))
    cand = np.empty((steps, n_hidden))

    h = np.zeros(n_hidden)
    c = np.zeros(n_hidden)
    for t in range(steps):
        x = x_seq[t]
        i_t = sigmoid_vec(w_xi @ x + w_hi @ h + w_ci * c + b_i)
        f_t = sigmoid_vec(w_xf @ x + w_hf @ h + w_cf * c + b_f)
        g_t = np.tanh(w_xc @ x + w_hc @ h + b_c)
        c = f_t * c + i_t * g_t
        o_t = sigmoid_vec(w_xo @ x + w_ho @ h + w_co * c + b_o)
        h = o_t * np.tanh(c)
        gate_i[t] = i_t
        gate_f[t] = f_t
        gate_o[t] = o_t
        cand[t] = g_t
        cells[t] = c
        hidden[t] = h
    return hidden, cells, gate_i, gate_f, gate_o, cand


@maybe_jit
def lstm_layer_backward(
    x_seq, hidden, cells, gate_i, gate_f, gate_o, cand, d_hidden,
    w_xi, w_xf, w_xc, w_xo,
    w_hi, w_hf, w_hc, w_ho,
    w_ci, w_cf, w_co,
):
    """Backpropagate through time for one layer.

    ``d_hidden`` holds, per step, the loss gradient flowing into h_t from
    outside the layer (softmax head and/or the layer above). Returns the
    gradients of every layer parameter plus ``dx_seq``, the gradient with
    respect to the layer input, which becomes ``d_hidden`` of the layer
    below.
    """
    steps, in_dim = x_seq.shape
    n_hidden = hidden.shape[1]

    g_wxi = np.zeros((n_hidden, in_dim))
    g_wxf = np.zeros((n_hidden, in_dim))
    g_wxc = np.zeros((n_hidden, in_dim))
    g_wxo = np.zeros((n_hidden, in_dim))
    g_whi = np.zeros((n_hidden, n_hidden))
    g_whf = np.zeros((n_hidden, n_hidden))
    g_whc = np.zeros((n_hidden, n_hidden))
    g_who = np.zeros((n_hidden, n_hidden))
    g_wci = np.zeros(n_hidden)
    g_wcf = np.zeros(n_hidden)
    g_wco = np.zeros(n_hidden)
    g_bi = np.zeros(n_hidden)
    g_bf = np.zeros(n_hidden)
    g_bc = np.zeros(n_hidden)
    g_bo = np.zeros(n_hidden)
    dx_seq = np.zeros((steps, in_dim))

    # contiguous copies so the transposed matvecs stay BLAS/numba friendly
    wxi_t = np.ascontiguousarray(w_xi.T)
    wxf_t = np.ascontiguousarray(w_xf.T)
    wxc_t = np.ascontiguousarray(w_xc.T)
    wxo_t = np.ascontiguousarray(w_xo.T)
    whi_t = np.ascontiguousarray(w_hi.T)
    whf_t = np.ascontiguousarray(w_hf.T)
    whc_t = np.ascontiguousarray(w_hc.T)
    who_t = np.ascontiguousarray(w_ho.T)

    zeros_h = np.zeros(n_hidden)
    dh_rec = np.zeros(n_hidden)
    dc_rec = np.zeros(n_hidden)
    for t in range(steps - 1, -1, -1):
        if t > 0:
            c_prev = cells[t - 1]
            h_prev = hidden[t - 1]
        else:
            c_prev = zeros_h
            h_prev = zeros_h
        dh = d_hidden[t] + dh_rec
        tan_c = np.tanh(cells[t])
        d_o = dh * tan_c
        da_o = d_o * gate_o[t] * (1.0 - gate_o[t])
        # cell gradient: through h_t, from the future, and via the output
        # gate's peephole on the current cell
        dc = dh * gate_o[t] * (1.0 - tan_c * tan_c) + dc_rec + w_co * da_o
        d_i = dc * cand[t]
        da_i = d_i * gate_i[t] * (1.0 - gate_i[t])
        d_f = dc * c_prev
        da_f = d_f * gate_f[t] * (1.0 - gate_f[t])
        d_g = dc * gate_i[t]
        da_g = d_g * (1.0 - cand[t] * cand[t])

        x = x_seq[t]
        g_wxi += np.outer(da_i, x)
        g_wxf += np.outer(da_f, x)
        g_wxc += np.outer(da_g, x)
        g_wxo += np.outer(da_o, x)
        g_whi += np.outer(da_i, h_prev)
        g_whf += np.outer(da_f, h_prev)
        g_whc += np.outer(da_g, h_prev)
        g_who += np.outer(da_o, h_prev)
        g_wci += da_i * c_prev
        g_wcf += da_f * c_prev
        g_wco += da_o * cells[t]
        g_bi += da_i
        g_bf += da_f
        g_bc += da_g
        g_bo += da_o

        dx_seq[t] = wxi_t @ da_i + wxf_t @ da_f + wxc_t @ da_g + wxo_t @ da_o
        dh_rec = whi_t @ da_i + whf_t @ da_f + whc_t @ da_g + who_t @ da_o
        dc_rec = dc * gate_f[t] + w_ci * da_i + w_cf * da_f
    return (
        g_wxi, g_wxf, g_wxc, g_wxo,
        g_whi, g_whf, g_whc, g_who,
        g_wci, g_wcf, g_wco,
        g_bi, g_bf, g_bc, g_bo,
        dx_seq,
    )
