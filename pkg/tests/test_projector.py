import numpy as np
import pytest

from scd.core_math import RngState
from scd.encoder import StaleCacheError
from scd.gradcheck import check_gradients
from scd.projector import ProjectorParams, project, project_backward, update_running_stats


def scalar_oracle(H, p):
    """Straight-line loops, no vectorization."""
    n = H.shape[0]

    def linear(x, w, b):
        return [[sum(x[i][k] * w[k][j] for k in range(len(w))) + b[j] for j in range(len(b))] for i in range(n)]

    def bn(z, i):
        cols = len(z[0])
        out = [[0.0] * cols for _ in range(n)]
        for j in range(cols):
            mean = sum(z[r][j] for r in range(n)) / n
            var = sum((z[r][j] - mean) ** 2 for r in range(n)) / n
            for r in range(n):
                out[r][j] = (z[r][j] - mean) / (var + p.eps) ** 0.5 * p.gammas[i][j] + p.betas[i][j]
        return out

    def relu(z):
        return [[max(v, 0.0) for v in row] for row in z]

    x = H.tolist()
    for i in range(2):
        x = relu(bn(linear(x, p.weights[i].tolist(), p.biases[i].tolist()), i))
    return np.array(linear(x, p.weights[2].tolist(), p.biases[2].tolist()))


def perturbed(d=8, P=16, seed=0, **kw):
    p = ProjectorParams.init(d, P, RngState(seed), **kw)
    gen = np.random.default_rng(seed)
    for arrs in (p.biases, p.gammas, p.betas):
        for a in arrs:
            a += gen.normal(scale=0.3, size=a.shape)
    return p


def test_batchnorm_fixed_point():
    p = ProjectorParams.init(3, 3, RngState(0))
    p.weights = [np.eye(3) for _ in range(3)]
    gen = np.random.default_rng(0)
    x = gen.normal(size=(50, 3))
    x = (x - x.mean(0)) / x.std(0)
    _, cache = project(x, p)
    np.testing.assert_allclose(cache.x_hat[0], x / np.sqrt(1 + p.eps), atol=1e-12)
    np.testing.assert_allclose(cache.x_hat[0], x, rtol=1e-5)


def test_constant_column_maps_to_beta():
    p = ProjectorParams.init(2, 2, RngState(0))
    p.weights = [np.eye(2) for _ in range(3)]
    p.betas[0][:] = [0.7, -0.2]
    x = np.array([[1.0, 3.0], [1.0, 4.0], [1.0, 5.0]])
    _, cache = project(x, p)
    bn_out = cache.x_hat[0] * p.gammas[0] + p.betas[0]
    np.testing.assert_allclose(bn_out[:, 0], 0.7, atol=1e-12)


def test_forward_matches_scalar_oracle():
    p = perturbed()
    H = np.random.default_rng(1).normal(size=(5, 8))
    out, _ = project(H, p)
    np.testing.assert_allclose(out, scalar_oracle(H, p), atol=1e-12, rtol=0)


def test_train_mode_needs_two_rows_and_matching_dim():
    p = ProjectorParams.init(4, 8, RngState(0))
    with pytest.raises(ValueError):
        project(np.ones((1, 4)), p)
    with pytest.raises(ValueError):
        project(np.ones((3, 5)), p)
    p.eval()
    out, _ = project(np.ones((1, 4)), p)
    assert out.shape == (1, 8)


def test_train_mode_batchnorm_statistics():
    p = ProjectorParams.init(6, 32, RngState(2))
    _, cache = project(np.random.default_rng(3).normal(size=(40, 6)), p)
    for x_hat in cache.x_hat:
        assert np.all(np.abs(x_hat.mean(0)) < 1e-9)
        assert np.all(np.abs(x_hat.var(0) - 1) < 1e-3)  # eps shrinks variance slightly


def test_eval_mode_is_row_equivariant():
    p = perturbed()
    gen = np.random.default_rng(4)
    for _ in range(3):
        _, cache = project(gen.normal(size=(10, 8)), p)
        update_running_stats(p, cache)
    p.eval()
    H = gen.normal(size=(7, 8))
    perm = gen.permutation(7)
    a, _ = project(H, p)
    b, _ = project(H[perm], p)
    np.testing.assert_allclose(a[perm], b, atol=1e-14)


def test_running_stats_update():
    p = ProjectorParams.init(3, 4, RngState(0), momentum=0.1)
    _, cache = project(np.random.default_rng(0).normal(size=(8, 3)), p)
    update_running_stats(p, cache)
    np.testing.assert_allclose(p.running_means[0], 0.1 * cache.batch_means[0])
    np.testing.assert_allclose(p.running_vars[0], 0.9 + 0.1 * cache.batch_vars[0] * 8 / 7)


@pytest.mark.parametrize("relu_before_bn", [False, True])
def test_backward_matches_finite_differences(relu_before_bn):
    p = perturbed(relu_before_bn=relu_before_bn)
    gen = np.random.default_rng(5)
    H = gen.normal(size=(4, 8))
    up = gen.normal(size=(4, 16))

    def loss():
        return float((project(H, p)[0] * up).sum())

    _, cache = project(H, p)
    grads, dH = project_backward(cache, p, up)
    errs = check_gradients(loss, p.named(), grads)
    errs["H"] = check_gradients(loss, {"H": H}, {"H": dH})["H"]
    assert max(errs.values()) < 1e-5, errs


def test_zero_upstream_gives_zero_gradients():
    p = perturbed()
    _, cache = project(np.random.default_rng(0).normal(size=(4, 8)), p)
    grads, dH = project_backward(cache, p, np.zeros((4, 16)))
    assert not np.any(dH) and all(not np.any(g) for g in grads.values())


def test_dead_relu_unit_has_no_incoming_weight_gradient():
    p = perturbed()
    p.betas[0][3] = -50.0  # BN output of unit 3 is negative for every row
    gen = np.random.default_rng(6)
    _, cache = project(gen.normal(size=(6, 8)), p)
    grads, _ = project_backward(cache, p, gen.normal(size=(6, 16)))
    assert not np.any(grads["projector.W0"][:, 3])
    assert not np.any(grads["projector.W1"][3, :])


def test_stale_cache_and_eval_mode_rejected():
    p = perturbed()
    _, cache = project(np.ones((3, 8)) + np.arange(3)[:, None], p)
    p.version += 1
    with pytest.raises(StaleCacheError):
        project_backward(cache, p, np.ones((3, 16)))
    p.eval()
    _, cache = project(np.ones((3, 8)), p)
    with pytest.raises(ValueError):
        project_backward(cache, p, np.ones((3, 16)))
