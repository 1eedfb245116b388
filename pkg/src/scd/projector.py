"""Three-layer MLP projector with batch normalization, forward and exact backward."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import RngState, check_finite
from .encoder import StaleCacheError


@dataclass
class ProjectorParams:
    weights: list[np.ndarray]  # d->P, P->P, P->P
    biases: list[np.ndarray]
    gammas: list[np.ndarray]  # one per hidden layer
    betas: list[np.ndarray]
    running_means: list[np.ndarray]
    running_vars: list[np.ndarray]
    eps: float = 1e-5
    momentum: float = 0.1
    relu_before_bn: bool = False
    training: bool = True
    version: int = 0

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"projector.W{i}"] = w
            out[f"projector.b{i}"] = b
        for i, (g, be) in enumerate(zip(self.gammas, self.betas)):
            out[f"projector.gamma{i}"] = g
            out[f"projector.beta{i}"] = be
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.running_means, self.running_vars)):
            out[f"projector.running_mean{i}"] = m
            out[f"projector.running_var{i}"] = v
        return out

    def train(self) -> "ProjectorParams":
        self.training = True
        return self

    def eval(self) -> "ProjectorParams":
        self.training = False
        return self

    @classmethod
    def init(cls, input_dim: int, proj_dim: int = 256, rng: RngState | None = None, **kw) -> "ProjectorParams":
        gen = (rng or RngState(0)).generator()
        dims = [input_dim, proj_dim, proj_dim, proj_dim]
        weights = [gen.normal(0.0, 1.0 / np.sqrt(dims[i]), size=(dims[i], dims[i + 1])) for i in range(3)]
        biases = [np.zeros(proj_dim) for _ in range(3)]
        return cls(
            weights, biases,
            gammas=[np.ones(proj_dim) for _ in range(2)],
            betas=[np.zeros(proj_dim) for _ in range(2)],
            running_means=[np.zeros(proj_dim) for _ in range(2)],
            running_vars=[np.ones(proj_dim) for _ in range(2)],
            **kw,
        )

    def validate(self) -> None:
        d = self.input_dim
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != d or b.shape != (w.shape[1],):
                raise ValueError("projector layer shapes do not chain")
            d = w.shape[1]
        if self.eps <= 0:
            raise ValueError("batchnorm epsilon must be positive")
        if any(np.any(v < 0) for v in self.running_vars):
            raise ValueError("running variance must be non-negative")


@dataclass
class ProjectorCache:
    params_id: int
    version: int
    training: bool
    inputs: list[np.ndarray]  # input to each linear layer
    pre_bn: list[np.ndarray]
    x_hat: list[np.ndarray]
    inv_std: list[np.ndarray]
    relu_in: list[np.ndarray]
    batch_means: list[np.ndarray] = field(default_factory=list)
    batch_vars: list[np.ndarray] = field(default_factory=list)


def _bn_forward(z, p: ProjectorParams, i: int):
    if p.training:
        mean = z.sum(axis=0) / z.shape[0]
        centred = z - mean
        var = np.einsum("ij,ij->j", centred, centred) / z.shape[0]
    else:
        mean, var = p.running_means[i], p.running_vars[i]
        centred = z - mean
    inv_std = 1.0 / np.sqrt(var + p.eps)
    x_hat = centred * inv_std
    return x_hat * p.gammas[i] + p.betas[i], x_hat, inv_std, mean, var


def _bn_backward(g, x_hat, inv_std, gamma):
    n = g.shape[0]
    d_gamma = (g * x_hat).sum(axis=0)
    d_beta = g.sum(axis=0)
    gx = g * gamma
    dz = inv_std / n * (n * gx - gx.sum(axis=0) - x_hat * (gx * x_hat).sum(axis=0))
    return dz, d_gamma, d_beta


def project(H: np.ndarray, params: ProjectorParams) -> tuple[np.ndarray, ProjectorCache]:
    """linear -> BN -> ReLU -> linear -> BN -> ReLU -> linear.

    Pure: running statistics are not touched here; pass the returned cache to
    :func:`update_running_stats` to fold in this batch.
    """
    H = np.asarray(getattr(H, "H", H), dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != params.input_dim:
        raise ValueError(f"projector expects (N, {params.input_dim}) input, got {H.shape}")
    if params.training and H.shape[0] < 2:
        raise ValueError("train-mode batchnorm needs at least 2 rows")
    cache = ProjectorCache(id(params), params.version, params.training, [], [], [], [], [])
    x = H
    for i in range(2):
        cache.inputs.append(x)
        z = x @ params.weights[i] + params.biases[i]
        if params.relu_before_bn:
            cache.relu_in.append(z)
            z = np.maximum(z, 0.0)
        cache.pre_bn.append(z)
        u, x_hat, inv_std, mean, var = _bn_forward(z, params, i)
        cache.x_hat.append(x_hat)
        cache.inv_std.append(inv_std)
        cache.batch_means.append(mean)
        cache.batch_vars.append(var)
        if not params.relu_before_bn:
            cache.relu_in.append(u)
            u = np.maximum(u, 0.0)
        x = u
    cache.inputs.append(x)
    out = x @ params.weights[2] + params.biases[2]
    return check_finite(out, "projector output"), cache


def update_running_stats(params: ProjectorParams, cache: ProjectorCache) -> None:
    if not cache.training:
        return
    m = params.momentum
    for i in range(2):
        n = cache.inputs[0].shape[0]
        unbiased = cache.batch_vars[i] * n / (n - 1)
        params.running_means[i] *= 1.0 - m
        params.running_means[i] += m * cache.batch_means[i]
        params.running_vars[i] *= 1.0 - m
        params.running_vars[i] += m * unbiased


def project_backward(cache: ProjectorCache | None, params: ProjectorParams,
                     grad_out: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Returns (parameter gradients, dL/dH); batch-statistics coupling included."""
    if cache is None:
        raise StaleCacheError("no forward cache; call project() first")
    if cache.params_id != id(params) or cache.version != params.version:
        raise StaleCacheError("forward cache is stale: parameters changed since project()")
    if not cache.training:
        raise ValueError("project_backward requires a train-mode forward pass")
    grads: dict[str, np.ndarray] = {}
    g = np.asarray(grad_out, dtype=np.float64)
    grads["projector.W2"] = cache.inputs[2].T @ g
    grads["projector.b2"] = g.sum(axis=0)
    g = g @ params.weights[2].T
    for i in (1, 0):
        if params.relu_before_bn:
            g, grads[f"projector.gamma{i}"], grads[f"projector.beta{i}"] = _bn_backward(
                g, cache.x_hat[i], cache.inv_std[i], params.gammas[i])
            g = g * (cache.relu_in[i] > 0)
        else:
            g = g * (cache.relu_in[i] > 0)
            g, grads[f"projector.gamma{i}"], grads[f"projector.beta{i}"] = _bn_backward(
                g, cache.x_hat[i], cache.inv_std[i], params.gammas[i])
        grads[f"projector.W{i}"] = cache.inputs[i].T @ g
        grads[f"projector.b{i}"] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return {k: grads[k] for k in params.named()}, g
