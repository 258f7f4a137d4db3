"""Hot numeric kernels: numba @njit versions with pure-numpy fallbacks.

Every kernel exists twice: a vectorized numpy implementation (always
available, exported with a ``_numpy`` suffix) and a numba-compiled loop
version. Which one the public name points at is decided once, at import
time: setting ``PRETRAINKIT_NUMBA=0`` in the environment (or numba being
missing) selects the numpy path. ``benchmarks/bench_kernels.py`` times the
two paths against each other.

All kernels operate on float64 C-contiguous arrays; callers are expected
to normalize layout before dispatching (see ``tensor.py``).
"""

import math
import os

import numpy as np

_flag = os.environ.get("PRETRAINKIT_NUMBA", "1").strip().lower()
if _flag in ("0", "false", "no", "off"):
    HAS_NUMBA = False
else:
    try:
        import numba

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA


# ---------------------------------------------------------------------------
# numpy implementations (always defined; also serve as the reference path)
# ---------------------------------------------------------------------------


def softmax2d_numpy(x):
    """Row softmax with max-subtraction. x (N, V) -> (N, V)."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax2d_grad_numpy(dy, y):
    """dx for y = softmax(x) rows: dx = y * (dy - sum(dy * y))."""
    inner = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - inner)


def layer_norm_numpy(x, gamma, beta, eps):
    """x (N, H) -> (y, mean (N,), rstd (N,)). Normalizes each row."""
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gamma + beta, mean, rstd


def layer_norm_grad_numpy(dy, x, gamma, mean, rstd):
    """Backward of layer_norm_numpy. Returns (dx, dgamma, dbeta)."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def cross_entropy_numpy(logits, labels, ignore_id):
    """Mean NLL over rows whose label != ignore_id.

    logits (N, V) float64, labels (N,) int64.
    Returns (loss_sum, count, probs) where loss_sum is the *sum* over
    supervised rows and probs the row softmax (kept for the backward pass).
    """
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    keep = labels != ignore_id
    count = int(keep.sum())
    if count == 0:
        return 0.0, 0, probs
    rows = np.nonzero(keep)[0]
    logz = np.log(z[rows, 0]) + m[rows, 0]
    loss_sum = float((logz - logits[rows, labels[rows]]).sum())
    return loss_sum, count, probs


def cross_entropy_grad_numpy(probs, labels, ignore_id, count, gscale):
    """dlogits = gscale/count * (softmax - onehot) on supervised rows."""
    dx = np.zeros_like(probs)
    keep = labels != ignore_id
    rows = np.nonzero(keep)[0]
    scale = gscale / count
    dx[rows] = probs[rows] * scale
    dx[rows, labels[rows]] -= scale
    return dx


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu_numpy(x):
    """tanh-approximation GELU."""
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_grad_numpy(dy, x):
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def adam_update_numpy(param, grad, m, v, lr, beta1, beta2, eps, t):
    """One in-place Adam step with bias correction. t is the 1-based step."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def embedding_grad_numpy(dtable, ids, dout, pad_id):
    """Scatter-add dout rows into dtable; rows with id == pad_id are skipped.

    dtable (V, H) in-place, ids (N,) int64, dout (N, H).
    """
    if pad_id >= 0:
        keep = ids != pad_id
        np.add.at(dtable, ids[keep], dout[keep])
    else:
        np.add.at(dtable, ids, dout)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:
    _njit = numba.njit(cache=True)

    @numba.njit(cache=True)
    def _softmax2d_nb(x):
        n, v = x.shape
        out = np.empty_like(x)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, v):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(v):
                e = math.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            inv = 1.0 / s
            for j in range(v):
                out[i, j] *= inv
        return out

    @numba.njit(cache=True)
    def _softmax2d_grad_nb(dy, y):
        n, v = y.shape
        dx = np.empty_like(y)
        for i in range(n):
            inner = 0.0
            for j in range(v):
                inner += dy[i, j] * y[i, j]
            for j in range(v):
                dx[i, j] = y[i, j] * (dy[i, j] - inner)
        return dx

    @numba.njit(cache=True)
    def _layer_norm_nb(x, gamma, beta, eps):
        n, h = x.shape
        y = np.empty_like(x)
        mean = np.empty(n)
        rstd = np.empty(n)
        for i in range(n):
            s = 0.0
            for j in range(h):
                s += x[i, j]
            mu = s / h
            sq = 0.0
            for j in range(h):
                d = x[i, j] - mu
                sq += d * d
            r = 1.0 / math.sqrt(sq / h + eps)
            mean[i] = mu
            rstd[i] = r
            for j in range(h):
                y[i, j] = (x[i, j] - mu) * r * gamma[j] + beta[j]
        return y, mean, rstd

    @numba.njit(cache=True)
    def _layer_norm_grad_nb(dy, x, gamma, mean, rstd):
        n, h = x.shape
        dx = np.empty_like(x)
        dgamma = np.zeros(h)
        dbeta = np.zeros(h)
        for i in range(n):
            mu = mean[i]
            r = rstd[i]
            m1 = 0.0
            m2 = 0.0
            for j in range(h):
                xhat = (x[i, j] - mu) * r
                dxh = dy[i, j] * gamma[j]
                dgamma[j] += dy[i, j] * xhat
                dbeta[j] += dy[i, j]
                m1 += dxh
                m2 += dxh * xhat
            m1 /= h
            m2 /= h
            for j in range(h):
                xhat = (x[i, j] - mu) * r
                dxh = dy[i, j] * gamma[j]
                dx[i, j] = r * (dxh - m1 - xhat * m2)
        return dx, dgamma, dbeta

    @numba.njit(cache=True)
    def _cross_entropy_nb(logits, labels, ignore_id):
        n, v = logits.shape
        probs = np.empty_like(logits)
        loss_sum = 0.0
        count = 0
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, v):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(v):
                e = math.exp(logits[i, j] - m)
                probs[i, j] = e
                s += e
            inv = 1.0 / s
            for j in range(v):
                probs[i, j] *= inv
            lab = labels[i]
            if lab != ignore_id:
                loss_sum += math.log(s) + m - logits[i, lab]
                count += 1
        return loss_sum, count, probs

    @numba.njit(cache=True)
    def _cross_entropy_grad_nb(probs, labels, ignore_id, count, gscale):
        n, v = probs.shape
        dx = np.zeros_like(probs)
        scale = gscale / count
        for i in range(n):
            lab = labels[i]
            if lab == ignore_id:
                continue
            for j in range(v):
                dx[i, j] = probs[i, j] * scale
            dx[i, lab] -= scale
        return dx

    @numba.njit(cache=True)
    def _gelu_nb(x):
        out = np.empty_like(x)
        flat = x.ravel()
        oflat = out.ravel()
        c = math.sqrt(2.0 / math.pi)
        for i in range(flat.size):
            xi = flat[i]
            t = math.tanh(c * (xi + 0.044715 * xi * xi * xi))
            oflat[i] = 0.5 * xi * (1.0 + t)
        return out

    @numba.njit(cache=True)
    def _gelu_grad_nb(dy, x):
        out = np.empty_like(x)
        xf = x.ravel()
        df = dy.ravel()
        of = out.ravel()
        c = math.sqrt(2.0 / math.pi)
        for i in range(xf.size):
            xi = xf[i]
            t = math.tanh(c * (xi + 0.044715 * xi * xi * xi))
            dinner = c * (1.0 + 3.0 * 0.044715 * xi * xi)
            of[i] = df[i] * (0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * dinner)
        return out

    @numba.njit(cache=True)
    def _adam_update_nb(param, grad, m, v, lr, beta1, beta2, eps, t):
        p = param.ravel()
        g = grad.ravel()
        mf = m.ravel()
        vf = v.ravel()
        c1 = 1.0 - beta1**t
        c2 = 1.0 - beta2**t
        for i in range(p.size):
            gi = g[i]
            mf[i] = beta1 * mf[i] + (1.0 - beta1) * gi
            vf[i] = beta2 * vf[i] + (1.0 - beta2) * gi * gi
            p[i] -= lr * (mf[i] / c1) / (math.sqrt(vf[i] / c2) + eps)

    @numba.njit(cache=True)
    def _embedding_grad_nb(dtable, ids, dout, pad_id):
        n, h = dout.shape
        for i in range(n):
            row = ids[i]
            if row == pad_id:
                continue
            for j in range(h):
                dtable[row, j] += dout[i, j]


if USE_NUMBA:
    softmax2d = _softmax2d_nb
    softmax2d_grad = _softmax2d_grad_nb
    layer_norm = _layer_norm_nb
    layer_norm_grad = _layer_norm_grad_nb
    cross_entropy = _cross_entropy_nb
    cross_entropy_grad = _cross_entropy_grad_nb
    # numpy's vectorized tanh beats the scalar-libm numba loop at every
    # size tried (see benchmarks/bench_kernels.py), so gelu stays on numpy
    gelu = gelu_numpy
    gelu_grad = gelu_grad_numpy
    adam_update = _adam_update_nb
    embedding_grad = _embedding_grad_nb
else:
    softmax2d = softmax2d_numpy
    softmax2d_grad = softmax2d_grad_numpy
    layer_norm = layer_norm_numpy
    layer_norm_grad = layer_norm_grad_numpy
    cross_entropy = cross_entropy_numpy
    cross_entropy_grad = cross_entropy_grad_numpy
    gelu = gelu_numpy
    gelu_grad = gelu_grad_numpy
    adam_update = adam_update_numpy
    embedding_grad = embedding_grad_numpy


KERNEL_NAMES = [
    "softmax2d",
    "softmax2d_grad",
    "layer_norm",
    "layer_norm_grad",
    "cross_entropy",
    "cross_entropy_grad",
    "gelu",
    "gelu_grad",
    "adam_update",
    "embedding_grad",
]
