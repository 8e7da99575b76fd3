"""Forward/backward kernels for the CRNN building blocks.

Feature maps use a channel-last layout ``(N, F, T, C)``: batch, frequency,
time, channels.  Every ``*_forward`` returns ``(output, cache)`` and the
matching ``*_backward`` consumes the upstream gradient and that cache.
"""

import numpy as np


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_ndim(name, arr, ndim):
    if arr.ndim != ndim:
        raise ValueError(f"{name}: expected {ndim}-D array, got shape {arr.shape}")


# -- convolution -- #

# below this many taps per output (kh*kw*C_in) an explicit im2col matrix is
# faster; above it, summing one shifted matmul per kernel tap wins
_IM2COL_MAX_TAPS = 32


def conv2d_forward(x, weight, bias):
    """Stride-1 'same' cross-correlation with zero padding.

    Parameters
    ----------
    x : ndarray, shape (N, F, T, C_in)
    weight : ndarray, shape (kh, kw, C_in, C_out), kh and kw odd
    bias : ndarray, shape (C_out,)

    Returns
    -------
    y : ndarray, shape (N, F, T, C_out)
    cache : tuple
    """
    _check_ndim("conv2d input", x, 4)
    _check_ndim("conv2d weight", weight, 4)
    kh, kw, c_in, c_out = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel must be odd-sized, got {kh}x{kw}")
    if x.shape[3] != c_in:
        raise ValueError(f"conv2d: input has {x.shape[3]} channels, kernel expects {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    n, f, t, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    if kh * kw * c_in <= _IM2COL_MAX_TAPS:
        cols = np.empty((n, f, t, kh, kw, c_in), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, :, i, j, :] = xp[:, i:i + f, j:j + t, :]
        cols = cols.reshape(n * f * t, kh * kw * c_in)
        y = cols @ weight.reshape(kh * kw * c_in, c_out)
        y += bias
        return y.reshape(n, f, t, c_out), (cols, x.shape, weight)
    # flatten the padded grid so every kernel tap is one contiguous slice;
    # rows then carry 2*pw junk columns that are dropped at the end
    width = t + 2 * pw
    span = f * width
    # one spare zero row keeps the last tap's slice inside the buffer
    xp = np.pad(xp, ((0, 0), (0, 1), (0, 0), (0, 0)))
    flat = xp.reshape(n, -1, c_in)
    y = np.empty((n, span, c_out), dtype=np.result_type(x, weight))
    y[...] = bias
    for i in range(kh):
        for j in range(kw):
            off = i * width + j
            y += flat[:, off:off + span] @ weight[i, j]
    y = y.reshape(n, f, width, c_out)[:, :, :t]
    return np.ascontiguousarray(y), (xp, x.shape, weight)


def conv2d_backward(dy, cache, input_grad=True):
    """Gradients of :func:`conv2d_forward`; returns ``(dx, dweight, dbias)``.

    ``dx`` is None when ``input_grad`` is False (first layer of a network).
    """
    saved, x_shape, weight = cache
    kh, kw, c_in, c_out = weight.shape
    n, f, t, _ = x_shape
    ph, pw = kh // 2, kw // 2
    dbias = dy.sum(axis=(0, 1, 2))
    if saved.ndim == 2:
        dy2 = dy.reshape(-1, c_out)
        dweight = (saved.T @ dy2).reshape(weight.shape)
        if not input_grad:
            return None, dweight, dbias
        dcols = (dy2 @ weight.reshape(-1, c_out).T).reshape(n, f, t, kh, kw, c_in)
        dxp = np.zeros((n, f + 2 * ph, t + 2 * pw, c_in), dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + f, j:j + t, :] += dcols[:, :, :, i, j, :]
        return dxp[:, ph:ph + f, pw:pw + t, :], dweight, dbias
    xp = saved
    width = t + 2 * pw
    span = f * width
    flat = xp.reshape(n, -1, c_in)
    dy_wide = np.zeros((n, f, width, c_out), dtype=dy.dtype)
    dy_wide[:, :, :t] = dy
    dy_wide = dy_wide.reshape(n, span, c_out)
    dweight = np.empty_like(weight)
    for i in range(kh):
        for j in range(kw):
            off = i * width + j
            win = flat[:, off:off + span]
            acc = win[0].T @ dy_wide[0]
            for k in range(1, n):
                acc += win[k].T @ dy_wide[k]
            dweight[i, j] = acc
    if not input_grad:
        return None, dweight, dbias
    dflat = np.zeros(flat.shape, dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            off = i * width + j
            dflat[:, off:off + span] += dy_wide @ weight[i, j].T
    dxp = dflat[:, :(f + 2 * ph) * width].reshape(n, f + 2 * ph, width, c_in)
    return dxp[:, ph:ph + f, pw:pw + t, :], dweight, dbias


# -- activations and pooling -- #

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def freq_maxpool_forward(x, size):
    """Non-overlapping max pooling of width ``size`` along the frequency axis."""
    n, f, t, c = x.shape
    if f % size:
        raise ValueError(f"frequency extent {f} not divisible by pool size {size}")
    xr = x.reshape(n, f // size, size, t, c)
    y = xr[:, :, 0].copy()
    for k in range(1, size):
        np.maximum(y, xr[:, :, k], out=y)
    # route each gradient to the first maximal entry of its window
    winner = np.empty(xr.shape, dtype=bool)
    free = np.ones(y.shape, dtype=bool)
    for k in range(size):
        hit = (xr[:, :, k] == y) & free
        winner[:, :, k] = hit
        free &= ~hit
    return y, (winner, x.shape)


def freq_maxpool_backward(dy, cache):
    winner, x_shape = cache
    return (winner * dy[:, :, None]).reshape(x_shape)


# -- recurrent -- #

def gru_forward(x, w_in, w_rec, bias, mask=None, reverse=False):
    """Single-direction GRU over ``x`` of shape (N, T, D).

    Gates are packed as ``[update | reset | candidate]`` along the last axis of
    ``w_in`` (D, 3H), ``w_rec`` (H, 3H) and ``bias`` (3H,).  The state update is
    ``h = (1 - z) * h_prev + z * h_cand`` from a zero initial state.  Where
    ``mask`` (N, T) is 0 the state is carried through unchanged.
    """
    _check_ndim("gru input", x, 3)
    n, t_len, d = x.shape
    if w_in.shape[0] != d:
        raise ValueError(f"gru: input width {d} != weight rows {w_in.shape[0]}")
    hid = w_rec.shape[0]
    if w_in.shape[1] != 3 * hid or w_rec.shape != (hid, 3 * hid) or bias.shape != (3 * hid,):
        raise ValueError("gru: inconsistent parameter shapes")
    if mask is not None and np.all(mask):
        mask = None
    # time-major buffers keep every per-step slice contiguous
    xw = np.ascontiguousarray((x @ w_in + bias).transpose(1, 0, 2))
    dt = x.dtype
    hs = np.empty((t_len, n, hid), dtype=dt)
    gates = np.empty((t_len, n, 3 * hid), dtype=dt)   # z | r | candidate
    prev = np.empty((t_len, n, hid), dtype=dt)
    m_t = None if mask is None else np.ascontiguousarray(mask.T)[:, :, None].astype(dt)
    u_zr = w_rec[:, :2 * hid]
    u_c = w_rec[:, 2 * hid:]
    h = np.zeros((n, hid), dtype=dt)
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for s in steps:
        prev[s] = h
        g = gates[s]
        g[:, :2 * hid] = sigmoid(xw[s, :, :2 * hid] + h @ u_zr)
        z, r = g[:, :hid], g[:, hid:2 * hid]
        g[:, 2 * hid:] = np.tanh(xw[s, :, 2 * hid:] + (r * h) @ u_c)
        step = z * (g[:, 2 * hid:] - h)
        if m_t is not None:
            step *= m_t[s]
        h = h + step
        hs[s] = h
    out = np.ascontiguousarray(hs.transpose(1, 0, 2))
    return out, (x, w_in, w_rec, gates, prev, m_t, reverse)


def gru_backward(dh_out, cache):
    """Backpropagation through time for :func:`gru_forward`.

    Returns ``(dx, dw_in, dw_rec, dbias)``.
    """
    x, w_in, w_rec, gates, prev, m_t, reverse = cache
    t_len, n, hid3 = gates.shape
    hid = hid3 // 3
    u_zr_t = np.ascontiguousarray(w_rec[:, :2 * hid].T)
    u_c_t = np.ascontiguousarray(w_rec[:, 2 * hid:].T)
    dout = np.ascontiguousarray(dh_out.transpose(1, 0, 2))
    dxw = np.empty((t_len, n, 3 * hid), dtype=dh_out.dtype)
    dh = np.zeros((n, hid), dtype=dh_out.dtype)
    steps = range(t_len) if reverse else range(t_len - 1, -1, -1)
    for s in steps:
        dh = dh + dout[s]
        g = gates[s]
        h_prev = prev[s]
        z, r, cand = g[:, :hid], g[:, hid:2 * hid], g[:, 2 * hid:]
        dh_in = dh if m_t is None else dh * m_t[s]
        d = dxw[s]
        d[:, 2 * hid:] = dh_in * z * (1 - cand * cand)
        d[:, :hid] = dh_in * (cand - h_prev) * z * (1 - z)
        drh = d[:, 2 * hid:] @ u_c_t
        d[:, hid:2 * hid] = drh * h_prev * r * (1 - r)
        dh = dh - dh_in * z + drh * r + d[:, :2 * hid] @ u_zr_t
    dw_rec = np.empty_like(w_rec)
    flat_prev = prev.reshape(-1, hid)
    dw_rec[:, :2 * hid] = flat_prev.T @ dxw[:, :, :2 * hid].reshape(-1, 2 * hid)
    rh = gates[:, :, hid:2 * hid] * prev
    dw_rec[:, 2 * hid:] = rh.reshape(-1, hid).T @ dxw[:, :, 2 * hid:].reshape(-1, hid)
    dxw = dxw.transpose(1, 0, 2)
    d = x.shape[2]
    dw_in = x.reshape(-1, d).T @ dxw.reshape(-1, 3 * hid)
    dbias = dxw.sum(axis=(0, 1))
    dx = dxw @ w_in.T
    return dx, dw_in, dw_rec, dbias


def bigru_forward(x, params, prefix="gru", mask=None):
    """Bidirectional GRU: forward and reversed passes concatenated per frame.

    ``params`` holds ``{prefix}.fw.*`` and ``{prefix}.bw.*`` tensors named
    ``w_in``, ``w_rec``, ``bias``.  Output shape is (N, T, 2H).
    """
    hf, cf = gru_forward(x, params[f"{prefix}.fw.w_in"], params[f"{prefix}.fw.w_rec"],
                         params[f"{prefix}.fw.bias"], mask=mask)
    hb, cb = gru_forward(x, params[f"{prefix}.bw.w_in"], params[f"{prefix}.bw.w_rec"],
                         params[f"{prefix}.bw.bias"], mask=mask, reverse=True)
    return np.concatenate([hf, hb], axis=2), (cf, cb, hf.shape[2], prefix)


def bigru_backward(dy, cache):
    """Returns ``(dx, grads)`` with grads keyed like the forward ``params``."""
    cf, cb, hid, prefix = cache
    dxf, *gf = gru_backward(dy[:, :, :hid], cf)
    dxb, *gb = gru_backward(dy[:, :, hid:], cb)
    grads = {}
    for direction, g in (("fw", gf), ("bw", gb)):
        for name, val in zip(("w_in", "w_rec", "bias"), g):
            grads[f"{prefix}.{direction}.{name}"] = val
    return dxf + dxb, grads


# -- output -- #

def linear_sigmoid_forward(x, weight, bias):
    """Per-frame affine map ``x @ weight + bias`` followed by the logistic sigmoid."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    p = sigmoid(x @ weight + bias)
    # keep outputs strictly inside (0, 1) even when the logistic saturates
    eps = np.finfo(p.dtype).eps
    np.clip(p, eps, 1 - eps, out=p)
    return p, (x, weight, p)


def linear_sigmoid_backward(dp, cache):
    x, weight, p = cache
    da = dp * p * (1 - p)
    d = x.shape[-1]
    da2 = da.reshape(-1, da.shape[-1])
    dweight = x.reshape(-1, d).T @ da2
    dbias = da2.sum(axis=0)
    dx = da @ weight.T
    return dx, dweight, dbias
