import numpy as np
import pytest

from netloc.errors import NumericError
from netloc.graphcore import hard_threshold
from netloc.numcore import eig_symmetric
from netloc.scenario import NoiseConfig, generate_scenario, measure_distances


def test_identity_eigenvalues():
    w, v = eig_symmetric(np.eye(3))
    np.testing.assert_allclose(w, [1.0, 1.0, 1.0])
    np.testing.assert_allclose(v @ v.T, np.eye(3), atol=1e-12)


def test_known_2x2():
    w, _ = eig_symmetric(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(w, [-1.0, 1.0], atol=1e-12)


@pytest.mark.parametrize("n,seed", [(5, 0), (20, 1), (60, 2)])
def test_residual_and_orthonormality(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    m = m + m.T
    w, v = eig_symmetric(m)
    assert np.all(np.diff(w) >= 0)
    resid = m @ v - v * w[None, :]
    assert np.abs(resid).max() <= 1e-8 * max(1.0, np.abs(w).max())
    np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-8)
    # cross-check the spectrum against LAPACK
    np.testing.assert_allclose(w, np.linalg.eigvalsh(m), atol=1e-8)


def test_laplacian_of_thresholded_graph_in_range():
    scen = generate_scenario(50, 10, (5.0, 5.0), seed=4)
    meas = measure_distances(scen, NoiseConfig(0.1, 0.1), seed=4)
    g = hard_threshold(meas, 1.2)
    ahat = g.norm_adjacency
    if not isinstance(ahat, np.ndarray):
        ahat = ahat.toarray()
    lap = np.eye(50) - ahat
    w, v = eig_symmetric(lap)
    assert w.min() >= -1e-9 and w.max() <= 2.0 + 1e-9
    resid = lap @ v - v * w[None, :]
    assert np.abs(resid).max() <= 1e-8


def test_rejects_non_symmetric():
    with pytest.raises(NumericError, match="symmetric"):
        eig_symmetric(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_deterministic():
    rng = np.random.default_rng(9)
    m = rng.standard_normal((12, 12))
    m = m + m.T
    w1, v1 = eig_symmetric(m)
    w2, v2 = eig_symmetric(m)
    assert np.array_equal(w1, w2) and np.array_equal(v1, v2)
