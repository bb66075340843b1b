import numpy as np
import pytest

from netloc import numcore as nc
from netloc.scenario import NoiseConfig, generate_scenario, measure_distances


def numeric_gradients(build_loss, params, eps=1e-6):
    """Central-difference gradients of a scalar-loss builder.

    build_loss(params: dict[str, ndarray]) -> float. Perturbs every
    entry of every parameter array by +/- eps.
    """
    grads = {}
    for name, base in params.items():
        g = np.zeros_like(base)
        flat = base.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            hi = build_loss(params)
            flat[k] = orig - eps
            lo = build_loss(params)
            flat[k] = orig
            g.ravel()[k] = (hi - lo) / (2.0 * eps)
        grads[name] = g
    return grads


def analytic_gradients(build_graph, params):
    """build_graph(graph, tensors) -> scalar loss tensor; returns grad dict."""
    graph = nc.DiffGraph()
    tensors = {name: graph.parameter(name, arr) for name, arr in params.items()}
    loss = build_graph(graph, tensors)
    graph.backward(loss)
    return graph.gradients(), float(loss.data[0, 0])


def assert_grads_close(build_graph, params, rtol=1e-5, atol=1e-7, eps=1e-6):
    """FD-check every parameter of a scalar-valued graph builder."""
    analytic, _ = analytic_gradients(build_graph, params)

    def loss_value(ps):
        graph = nc.DiffGraph()
        tensors = {name: graph.parameter(name, arr) for name, arr in ps.items()}
        return float(build_graph(graph, tensors).data[0, 0])

    numeric = numeric_gradients(loss_value, params, eps=eps)
    for name in params:
        a, n = analytic[name], numeric[name]
        err = np.abs(a - n)
        bound = atol + rtol * np.maximum(np.abs(a), np.abs(n))
        assert np.all(err <= bound), (
            f"gradient mismatch for {name}: max err {err.max():.3e}, "
            f"analytic {a.ravel()[np.argmax(err)]:.6e} vs "
            f"numeric {n.ravel()[np.argmax(err)]:.6e}"
        )


def scalarize(graph, out, seed=1234):
    """Reduce any op output to a scalar via a fixed random projection."""
    rng = np.random.default_rng(seed)
    proj = graph.constant(rng.standard_normal(out.shape))
    return nc.sum_all(nc.hadamard(out, proj))


@pytest.fixture(scope="session")
def small_scene():
    scen = generate_scenario(24, 6, (5.0, 5.0), seed=11)
    meas = measure_distances(scen, NoiseConfig(0.1, 0.1), seed=11)
    return scen, meas


@pytest.fixture(scope="session")
def mid_scene():
    scen = generate_scenario(60, 12, (5.0, 5.0), seed=3)
    meas = measure_distances(scen, NoiseConfig(0.1, 0.2), seed=3)
    return scen, meas
