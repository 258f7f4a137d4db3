"""The numba kernels must agree with their numpy fallbacks."""

import numpy as np
import pytest

from pretrainkit import kernels

pytestmark = pytest.mark.skipif(
    not kernels.HAS_NUMBA, reason="numba unavailable; only one path to test"
)


@pytest.fixture
def arrays(rng):
    return rng.uniform(-3, 3, (7, 11))


def test_softmax_pair(arrays):
    a = np.ascontiguousarray(arrays)
    nb = kernels._softmax2d_nb(a)
    ref = kernels.softmax2d_numpy(a)
    assert np.max(np.abs(nb - ref)) < 1e-12


def test_softmax_grad_pair(rng, arrays):
    y = kernels.softmax2d_numpy(np.ascontiguousarray(arrays))
    dy = np.ascontiguousarray(rng.uniform(-1, 1, y.shape))
    nb = kernels._softmax2d_grad_nb(dy, y)
    ref = kernels.softmax2d_grad_numpy(dy, y)
    assert np.max(np.abs(nb - ref)) < 1e-12


def test_layer_norm_pair(rng, arrays):
    x = np.ascontiguousarray(arrays)
    gamma = rng.uniform(0.5, 1.5, x.shape[1])
    beta = rng.uniform(-1, 1, x.shape[1])
    y_nb, m_nb, r_nb = kernels._layer_norm_nb(x, gamma, beta, 1e-5)
    y_np, m_np, r_np = kernels.layer_norm_numpy(x, gamma, beta, 1e-5)
    assert np.max(np.abs(y_nb - y_np)) < 1e-12
    assert np.max(np.abs(m_nb - m_np)) < 1e-12
    assert np.max(np.abs(r_nb - r_np)) < 1e-12
    dy = np.ascontiguousarray(rng.uniform(-1, 1, x.shape))
    dx_nb, dg_nb, db_nb = kernels._layer_norm_grad_nb(dy, x, gamma, m_np, r_np)
    dx_np, dg_np, db_np = kernels.layer_norm_grad_numpy(dy, x, gamma, m_np, r_np)
    assert np.max(np.abs(dx_nb - dx_np)) < 1e-12
    assert np.max(np.abs(dg_nb - dg_np)) < 1e-12
    assert np.max(np.abs(db_nb - db_np)) < 1e-12


def test_cross_entropy_pair(rng):
    logits = np.ascontiguousarray(rng.uniform(-4, 4, (9, 6)))
    labels = rng.integers(0, 6, 9).astype(np.int64)
    labels[3] = -1
    s_nb, c_nb, p_nb = kernels._cross_entropy_nb(logits, labels, -1)
    s_np, c_np, p_np = kernels.cross_entropy_numpy(logits, labels, -1)
    assert c_nb == c_np
    assert abs(s_nb - s_np) < 1e-10
    assert np.max(np.abs(p_nb - p_np)) < 1e-12
    g_nb = kernels._cross_entropy_grad_nb(p_np, labels, -1, c_np, 1.0)
    g_np = kernels.cross_entropy_grad_numpy(p_np, labels, -1, c_np, 1.0)
    assert np.max(np.abs(g_nb - g_np)) < 1e-14


def test_gelu_pair(rng):
    x = np.ascontiguousarray(rng.uniform(-4, 4, (5, 8)))
    assert np.max(np.abs(kernels._gelu_nb(x) - kernels.gelu_numpy(x))) < 1e-13
    dy = np.ascontiguousarray(rng.uniform(-1, 1, x.shape))
    assert np.max(np.abs(
        kernels._gelu_grad_nb(dy, x) - kernels.gelu_grad_numpy(dy, x)
    )) < 1e-13


def test_adam_pair(rng):
    shape = (4, 5)
    p1 = rng.uniform(-1, 1, shape)
    p2 = p1.copy()
    g = rng.uniform(-1, 1, shape)
    m1, v1 = np.zeros(shape), np.zeros(shape)
    m2, v2 = np.zeros(shape), np.zeros(shape)
    for t in range(1, 4):
        kernels._adam_update_nb(p1, g, m1, v1, 0.01, 0.9, 0.999, 1e-8, t)
        kernels.adam_update_numpy(p2, g, m2, v2, 0.01, 0.9, 0.999, 1e-8, t)
    assert np.max(np.abs(p1 - p2)) < 1e-14


def test_embedding_grad_pair(rng):
    d1 = np.zeros((6, 3))
    d2 = np.zeros((6, 3))
    ids = rng.integers(0, 6, 10).astype(np.int64)
    dout = np.ascontiguousarray(rng.uniform(-1, 1, (10, 3)))
    kernels._embedding_grad_nb(d1, ids, dout, 0)
    kernels.embedding_grad_numpy(d2, ids, dout, 0)
    assert np.max(np.abs(d1 - d2)) < 1e-14


def test_env_flag_selects_numpy_path(tmp_path):
    import subprocess
    import sys

    code = (
        "import os; os.environ['PRETRAINKIT_NUMBA']='0'; "
        "from pretrainkit import kernels; "
        "assert not kernels.USE_NUMBA; "
        "assert kernels.softmax2d is kernels.softmax2d_numpy; "
        "print('numpy path ok')"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                         text=True)
    assert out.returncode == 0, out.stderr
    assert "numpy path ok" in out.stdout
