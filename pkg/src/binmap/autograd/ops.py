"""Differentiable operators backed by numpy.

Only the operators the pipeline actually needs live here. Convolutions use
im2col + GEMM; their input gradients reuse the same col2im scatter that also
implements the transposed convolution forward, so conv2d/deconv2d are exact
adjoints of each other by construction. Reductions accumulate in float64 and
cast back to float32.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_result

_F32 = np.float32


# ---------------------------------------------------------------------------
# elementwise / structural


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return make_result(out_data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * _F32(c))

    return make_result(a.data * _F32(c), (a,), backward)


def crop2d(a: Tensor, r0: int, c0: int, h: int, w: int) -> Tensor:
    """Slice the trailing two axes; gradient zero-pads back."""
    a = as_tensor(a)
    H, W = a.shape[-2], a.shape[-1]
    if r0 < 0 or c0 < 0 or r0 + h > H or c0 + w > W:
        raise ValueError("crop window out of bounds")
    sl = (Ellipsis, slice(r0, r0 + h), slice(c0, c0 + w))
    out_data = a.data[sl].copy()

    def backward(g):
        if a.requires_grad:
            gz = np.zeros_like(a.data)
            gz[sl] = g
            a.accumulate_grad(gz)

    return make_result(out_data, (a,), backward)


def mean_over(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(ax % a.ndim for ax in axes)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    out_data = a.data.mean(axis=axes, dtype=np.float64).astype(_F32)

    def backward(g):
        if a.requires_grad:
            gexp = np.expand_dims(g, axes) if axes else g
            a.accumulate_grad(np.broadcast_to(gexp / _F32(n), a.shape).copy())

    return make_result(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# convolution family


def _pad_amount(k: int, padding: str) -> int:
    if padding == "same":
        if k % 2 != 1:
            raise ValueError("same-padding needs an odd kernel")
        return (k - 1) // 2
    if padding == "valid":
        return 0
    raise ValueError(f"unknown padding {padding!r}")


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, Ho, Wo, k, k)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * k * k)
    return cols, Ho, Wo


def _col2im(gcols: np.ndarray, xshape, k: int, stride: int, pad: int, Ho: int, Wo: int):
    B, C, H, W = xshape
    gp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=_F32)
    g6 = gcols.reshape(B, Ho, Wo, C, k, k).transpose(0, 3, 1, 2, 4, 5)
    for ki in range(k):
        for kj in range(k):
            gp[:, :, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride] += g6[..., ki, kj]
    if pad:
        return gp[:, :, pad:H + pad, pad:W + pad]
    return gp


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation convolution. x: (B,C,H,W), w: (Cout,Cin,k,k)."""
    x, w = as_tensor(x), as_tensor(w)
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    Cout, Cin, k, k2 = w.shape
    if k != k2:
        raise ValueError("kernel must be square")
    if x.ndim != 4 or x.shape[1] != Cin:
        raise ValueError(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}")
    pad = _pad_amount(k, padding)
    cols, Ho, Wo = _im2col(x.data, k, stride, pad)
    wmat = w.data.reshape(Cout, Cin * k * k)
    y = cols @ wmat.T
    if b is not None:
        b = as_tensor(b)
        y = y + b.data[None, :]
    B = x.shape[0]
    out_data = y.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2)
    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, Cout)
        if w.requires_grad:
            w.accumulate_grad((g2.T @ cols).reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g2.sum(axis=0, dtype=np.float64).astype(_F32))
        if x.requires_grad:
            gcols = g2 @ wmat
            x.accumulate_grad(_col2im(gcols, x.shape, k, stride, pad, Ho, Wo))

    return make_result(out_data, inputs, backward)


def deconv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution doubling the spatial dims.

    Exact adjoint of `conv2d(·, w, stride=2, padding="same")`: the kernel has
    the conv layout (Cout,Cin,k,k) and maps Cout input channels to Cin output
    channels, so the same tensor can be passed to both ops.
    """
    x, w = as_tensor(x), as_tensor(w)
    if stride != 2:
        raise ValueError("only stride-2 transposed convolution is supported")
    Cout, Cin, k, _ = w.shape
    if x.ndim != 4 or x.shape[1] != Cout:
        raise ValueError(f"deconv2d channel mismatch: input {x.shape}, kernel {w.shape}")
    pad = _pad_amount(k, "same")
    B, _, h, wd = x.shape
    H, W = 2 * h, 2 * wd
    x2 = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, Cout)
    wmat = w.data.reshape(Cout, Cin * k * k)
    out_data = _col2im(x2 @ wmat, (B, Cin, H, W), k, stride, pad, h, wd)
    if b is not None:
        b = as_tensor(b)
        out_data = out_data + b.data[None, :, None, None]
    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        gcols, Ho, Wo = _im2col(g.astype(_F32), k, stride, pad)
        if x.requires_grad:
            gx = (gcols @ wmat.T).reshape(B, h, wd, Cout).transpose(0, 3, 1, 2)
            x.accumulate_grad(gx)
        if w.requires_grad:
            w.accumulate_grad((x2.T @ gcols).reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3), dtype=np.float64).astype(_F32))

    return make_result(out_data, inputs, backward)


def clip_st(x: Tensor, cap: float) -> Tensor:
    """Clamp into [-cap, cap]; the backward pass is straight-through inside
    the band and zero outside it (hard-tanh estimator).

    Bounding binarizer logits keeps grouped-softmax probabilities away from
    exact one-hot so softmax gradients never vanish; zeroing the gradient of
    railed logits stops the optimizer from pushing them (and the activations
    feeding them) outward forever with no forward feedback.
    """
    x = as_tensor(x)
    cap = float(cap)
    inside = np.abs(x.data) <= _F32(cap)
    out_data = np.clip(x.data, -_F32(cap), _F32(cap))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * inside)

    return make_result(out_data, (x,), backward)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """x if x >= 0 else slope*x; slope is one learnable value per channel."""
    x, slope = as_tensor(x), as_tensor(slope)
    s = slope.data.reshape((1, -1) + (1,) * (x.ndim - 2))
    neg = x.data < 0
    out_data = np.where(neg, x.data * s, x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.where(neg, g * s, g))
        if slope.requires_grad:
            gs = np.where(neg, g * x.data, 0.0)
            axes = (0,) + tuple(range(2, x.ndim))
            slope.accumulate_grad(gs.sum(axis=axes, dtype=np.float64).astype(_F32))

    return make_result(out_data, (x, slope), backward)


# ---------------------------------------------------------------------------
# grouped softmax + straight-through binarizer


def _grouped(x: np.ndarray, group_size: int):
    c_axis = x.ndim - 3  # channels of (..., C, H, W)
    C = x.shape[c_axis]
    if C % group_size != 0:
        raise ValueError(f"{C} channels not divisible by group size {group_size}")
    G = C // group_size
    return x.reshape(x.shape[:c_axis] + (G, group_size) + x.shape[c_axis + 1:]), c_axis + 1


def grouped_softmax(logits: Tensor, group_size: int) -> Tensor:
    """Softmax within consecutive channel groups of size `group_size`."""
    logits = as_tensor(logits)
    v, gaxis = _grouped(logits.data, group_size)
    m = v.max(axis=gaxis, keepdims=True)
    e = np.exp((v - m).astype(np.float64))
    p = (e / e.sum(axis=gaxis, keepdims=True)).astype(_F32)
    out_data = p.reshape(logits.shape)

    def backward(g):
        if not logits.requires_grad:
            return
        gv, _ = _grouped(g, group_size)
        dot = (gv.astype(np.float64) * p).sum(axis=gaxis, keepdims=True)
        gin = (p * (gv - dot)).astype(_F32)
        logits.accumulate_grad(gin.reshape(logits.shape))

    return make_result(out_data, (logits,), backward)


def binarize_st(probs: Tensor, group_size: int) -> Tensor:
    """Threshold grouped probabilities into at-most-one-hot bits.

    Within each group the bit is set only at the lowest-index maximizer, and
    only when that probability is >= 0.5 (otherwise the group is all-zero).
    The backward pass is the identity: gradients flow through unchanged.
    """
    probs = as_tensor(probs)
    v, gaxis = _grouped(probs.data, group_size)
    am = np.expand_dims(v.argmax(axis=gaxis), gaxis)  # first maximizer
    pm = np.take_along_axis(v, am, axis=gaxis)
    bits = np.zeros_like(v)
    np.put_along_axis(bits, am, (pm >= 0.5).astype(_F32), axis=gaxis)
    out_data = bits.reshape(probs.shape)

    def backward(g):
        if probs.requires_grad:
            probs.accumulate_grad(g)

    return make_result(out_data, (probs,), backward)


# ---------------------------------------------------------------------------
# softmax / losses


def softmax_flat(scores: Tensor) -> Tensor:
    """Softmax over every entry of the tensor (one probability volume)."""
    return softmax_batched(scores, batch_dims=0)


def softmax_batched(scores: Tensor, batch_dims: int = 1) -> Tensor:
    """Softmax over all trailing dims; leading `batch_dims` dims index samples."""
    scores = as_tensor(scores)
    lead = scores.shape[:batch_dims]
    flat = scores.data.reshape(lead + (-1,))
    m = flat.max(axis=-1, keepdims=True)
    e = np.exp((flat - m).astype(np.float64))
    p = (e / e.sum(axis=-1, keepdims=True)).astype(_F32)
    out_data = p.reshape(scores.shape)

    def backward(g):
        if not scores.requires_grad:
            return
        gf = g.reshape(lead + (-1,))
        dot = (gf.astype(np.float64) * p).sum(axis=-1, keepdims=True)
        scores.accumulate_grad((p * (gf - dot)).astype(_F32).reshape(scores.shape))

    return make_result(out_data, (scores,), backward)


def cross_entropy(y: Tensor, y_gt) -> Tensor:
    """Negative log-likelihood of the target under probability tensor `y`.

    y_gt may be: a flat int index (single volume), a 1-D int array of per-
    sample flat indices (y's first axis is the batch; the mean is returned),
    or a one-hot float array shaped like y.
    """
    y = as_tensor(y)
    if isinstance(y_gt, (int, np.integer)):
        idx = np.asarray([int(y_gt)])
        flat = y.data.reshape(1, -1)
        batched = False
    elif isinstance(y_gt, np.ndarray) and y_gt.dtype.kind in "iu":
        idx = y_gt.astype(np.int64).reshape(-1)
        flat = y.data.reshape(idx.size, -1)
        batched = True
    else:
        hot = np.asarray(y_gt, dtype=np.float64)
        if hot.shape != y.shape:
            raise ValueError("one-hot target shape mismatch")
        val = -(hot * np.log(np.maximum(y.data, np.finfo(np.float64).tiny))).sum()

        def backward_hot(g):
            if y.requires_grad:
                y.accumulate_grad((-g * hot / np.maximum(y.data, 1e-30)).astype(_F32))

        return make_result(np.float64(val), (y,), backward_hot)

    n = idx.size
    picked = flat[np.arange(n), idx].astype(np.float64)
    if np.any(picked <= 0.0):
        raise FloatingPointError("zero probability at target index")
    val = -np.log(picked).sum() / n

    def backward(g):
        if not y.requires_grad:
            return
        gf = np.zeros_like(flat)
        gf[np.arange(n), idx] = (-float(g) / (n * picked)).astype(_F32)
        y.accumulate_grad(gf.reshape(y.shape))

    _ = batched
    return make_result(np.float64(val), (y,), backward)


def score_nll(scores: Tensor, gt_indices, batch_dims: int = 1) -> Tensor:
    """Mean NLL of softmax(scores) at per-sample flat targets, computed in
    log space (logsumexp - score[gt]) so extreme scores cannot underflow."""
    scores = as_tensor(scores)
    lead = scores.shape[:batch_dims] if batch_dims else (1,)
    flat = scores.data.reshape((int(np.prod(lead)), -1)).astype(np.float64)
    idx = np.atleast_1d(np.asarray(gt_indices, dtype=np.int64)).reshape(-1)
    if idx.size != flat.shape[0]:
        raise ValueError("one target index per sample required")
    m = flat.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(flat - m).sum(axis=1))
    n = idx.size
    val = (lse - flat[np.arange(n), idx]).sum() / n

    def backward(g):
        if not scores.requires_grad:
            return
        p = np.exp(flat - lse[:, None])
        p[np.arange(n), idx] -= 1.0
        scores.accumulate_grad((float(g) / n * p).astype(_F32).reshape(scores.shape))

    return make_result(np.float64(val), (scores,), backward)


def entropy_sum(t: Tensor) -> Tensor:
    """-sum(t * ln t) with the 0*log(0) = 0 convention."""
    t = as_tensor(t)
    d = t.data.astype(np.float64)
    if np.any(d < 0):
        raise ValueError("entropy of negative values")
    pos = d > 0
    val = -(d[pos] * np.log(d[pos])).sum()

    def backward(g):
        if t.requires_grad:
            grad = np.zeros_like(d)
            grad[pos] = -(np.log(d[pos]) + 1.0)
            t.accumulate_grad((float(g) * grad).astype(_F32))

    return make_result(np.float64(val), (t,), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError("mse shape mismatch")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    n = diff.size
    val = (diff * diff).sum() / n

    def backward(g):
        coef = 2.0 * float(g) / n
        if a.requires_grad:
            a.accumulate_grad((coef * diff).astype(_F32))
        if b.requires_grad:
            b.accumulate_grad((-coef * diff).astype(_F32))

    return make_result(np.float64(val), (a, b), backward)


def power_normalized_mse(pred: Tensor, target: Tensor) -> Tensor:
    """sum((pred-target)^2) / sum(target^2); target is treated as constant.

    Scale-free reconstruction error: 1.0 corresponds to predicting zeros.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    tgt = target.data.astype(np.float64)
    denom = max((tgt * tgt).sum(), 1e-12)
    diff = pred.data.astype(np.float64) - tgt
    val = (diff * diff).sum() / denom

    def backward(g):
        if pred.requires_grad:
            pred.accumulate_grad((2.0 * float(g) / denom * diff).astype(_F32))

    return make_result(np.float64(val), (pred,), backward)


# ---------------------------------------------------------------------------
# spatial resampling + FFT correlation


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def rotate_bilinear(emb: Tensor, angles, center: tuple[float, float] | None = None) -> Tensor:
    """Rotate feature maps about a pivot by bilinear resampling.

    emb: (B,C,H,W); angles: array (A,) shared across the batch or (B,A) per
    sample. Output is (B,A,C,H,W). Samples falling outside the input support
    are zero. `center` is (row, col); default is the tensor center.
    """
    emb = as_tensor(emb)
    if emb.ndim != 4:
        raise ValueError("rotate_bilinear expects (B,C,H,W)")
    B, C, H, W = emb.shape
    ang = np.asarray(angles, dtype=np.float64)
    if ang.ndim == 1:
        ang = np.broadcast_to(ang[None, :], (B, ang.shape[0]))
    if ang.shape[0] != B:
        raise ValueError("angle batch size mismatch")
    A = ang.shape[1]
    cy, cx = ((H - 1) / 2.0, (W - 1) / 2.0) if center is None else (float(center[0]), float(center[1]))

    jj, ii = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    dx, dy = jj - cx, ii - cy
    cos = np.cos(ang)[:, :, None, None]
    sin = np.sin(ang)[:, :, None, None]
    # content rotates by +angle: output samples the input at R(-angle)
    sx = cx + cos * dx + sin * dy
    sy = cy - sin * dx + cos * dy

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0).astype(_F32)
    fy = (sy - y0).astype(_F32)
    flat = emb.data.reshape(B, C, H * W)
    bsel = np.arange(B)[:, None, None, None]

    corners = []
    for oy, ox, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yc, xc = y0 + oy, x0 + ox
        valid = (yc >= 0) & (yc < H) & (xc >= 0) & (xc < W)
        idx = np.clip(yc, 0, H - 1) * W + np.clip(xc, 0, W - 1)
        corners.append((idx, (wgt * valid).astype(_F32)))

    out_data = np.zeros((B, A, C, H, W), dtype=_F32)
    for idx, wgt in corners:
        gathered = flat[bsel, :, idx]          # (B, A, H, W, C)
        out_data += (gathered * wgt[..., None]).transpose(0, 1, 4, 2, 3)

    def backward(g):
        if not emb.requires_grad:
            return
        gacc = np.zeros((B, H * W, C), dtype=_F32)
        gT = np.ascontiguousarray(g.transpose(0, 1, 3, 4, 2))  # (B,A,H,W,C)
        for idx, wgt in corners:
            np.add.at(gacc, (bsel.reshape(B, 1, 1, 1).repeat(A, 1).repeat(H, 2).repeat(W, 3), idx),
                      gT * wgt[..., None])
        emb.accumulate_grad(gacc.transpose(0, 2, 1).reshape(B, C, H, W))

    return make_result(out_data, (emb,), backward)


def correlate_valid(map_emb: Tensor, kernels: Tensor) -> Tensor:
    """Valid-mode cross-correlation summed over channels, via zero-padded FFT.

    map_emb: (B,C,H,W); kernels: (B,A,C,h,w) with h<=H, w<=W. Output
    (B,A,H-h+1,W-w+1); entry (dy,dx) is the inner product of kernel a with
    the map window whose top-left corner is (dy,dx). FFT planes are padded to
    the next power of two per dimension.
    """
    map_emb, kernels = as_tensor(map_emb), as_tensor(kernels)
    B, C, H, W = map_emb.shape
    Bk, A, Ck, h, w = kernels.shape
    if Bk != B or Ck != C:
        raise ValueError("correlate_valid batch/channel mismatch")
    if h > H or w > W:
        raise ValueError("kernel larger than map")
    ny, nx = H - h + 1, W - w + 1
    P, Q = _next_pow2(H), _next_pow2(W)
    Fm = np.fft.rfft2(map_emb.data, s=(P, Q))          # (B,C,P,Qr)
    Fk = np.fft.rfft2(kernels.data, s=(P, Q))          # (B,A,C,P,Qr)
    prod = (Fm[:, None] * np.conj(Fk)).sum(axis=2)
    out_data = np.fft.irfft2(prod, s=(P, Q))[:, :, :ny, :nx].astype(_F32)

    def backward(g):
        Fg = np.fft.rfft2(g.astype(_F32), s=(P, Q))    # (B,A,P,Qr)
        if kernels.requires_grad:
            pk = Fm[:, None] * np.conj(Fg)[:, :, None]
            gk = np.fft.irfft2(pk, s=(P, Q))[:, :, :, :h, :w].astype(_F32)
            kernels.accumulate_grad(gk)
        if map_emb.requires_grad:
            pm = (Fg[:, :, None] * Fk).sum(axis=1)
            gm = np.fft.irfft2(pm, s=(P, Q))[:, :, :H, :W].astype(_F32)
            map_emb.accumulate_grad(gm)

    return make_result(out_data, (map_emb, kernels), backward)
