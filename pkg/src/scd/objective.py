"""Self-contrastive divergence, projected cross-correlation, decorrelation loss and the joint objective.

All functions return their value together with exact analytic gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import RngState, check_finite
from .encoder import SentenceBatch, encode_backward, encode_pair
from .model import ModelParams
from .projector import project, project_backward

CORR_MODES = ("cosine", "literal")
DIAG_SIGN_MODES = ("prose", "literal")
ABLATION_MODES = ("joint", "ls_only", "lc_only")


@dataclass
class Hyperparams:
    alpha: float = 0.005
    lambda_: float = 0.013
    r_a: float = 0.05
    r_b: float = 0.15
    diag_sign_mode: str = "prose"
    corr_mode: str = "cosine"
    center: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.r_a < self.r_b < 1.0:
            raise ValueError(f"need 0 <= r_a < r_b < 1, got r_a={self.r_a}, r_b={self.r_b}")
        if self.lambda_ < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lambda_}")
        if self.diag_sign_mode not in DIAG_SIGN_MODES:
            raise ValueError(f"diag_sign_mode must be one of {DIAG_SIGN_MODES}")
        if self.corr_mode not in CORR_MODES:
            raise ValueError(f"corr_mode must be one of {CORR_MODES}")


@dataclass
class LossBreakdown:
    l_s: float
    l_c_invariance: float  # sum_j (1 - C_jj)^2, unsigned
    l_c_redundancy: float  # sum_{j != k} C_jk^2, unweighted
    l_c: float
    total: float
    alpha: float
    lambda_: float

    def as_row(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("l_s", "l_c_invariance", "l_c_redundancy", "l_c", "total")}


@dataclass
class CorrelationMatrix:
    C: np.ndarray
    mode: str = "cosine"
    _cache: tuple = field(default=(), repr=False)


def self_contrastive_loss(h_a: np.ndarray, h_b: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean row-wise cosine similarity between the two views and its gradients."""
    h_a = np.asarray(getattr(h_a, "H", h_a), dtype=np.float64)
    h_b = np.asarray(getattr(h_b, "H", h_b), dtype=np.float64)
    if h_a.shape != h_b.shape or h_a.ndim != 2:
        raise ValueError(f"views must share an (N, d) shape, got {h_a.shape} and {h_b.shape}")
    n = h_a.shape[0]
    na = np.linalg.norm(h_a, axis=1)
    nb = np.linalg.norm(h_b, axis=1)
    for norms, view in ((na, "A"), (nb, "B")):
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ZeroDivisionError(f"row {zero[0]} of view {view} has zero norm; cosine undefined")
    dots = np.einsum("ij,ij->i", h_a, h_b)
    cos = dots / (na * nb)
    l_s = float(np.clip(cos, -1.0, 1.0).mean())  # rounding can overshoot by an ulp
    g_a = (h_b / (na * nb)[:, None] - cos[:, None] * h_a / (na**2)[:, None]) / n
    g_b = (h_a / (na * nb)[:, None] - cos[:, None] * h_b / (nb**2)[:, None]) / n
    return l_s, g_a, g_b


def _zero_columns(x: np.ndarray, which: str) -> None:
    bad = np.flatnonzero(~np.any(x != 0, axis=0))
    if bad.size:
        raise ZeroDivisionError(f"column {bad[0]} of projected batch {which} is all zero")


def cross_correlation(p_a: np.ndarray, p_b: np.ndarray, mode: str = "cosine", center: bool = False) -> CorrelationMatrix:
    """P x P cross-correlation between the features of two projected views.

    ``cosine`` divides by the product of column norms so entries lie in [-1, 1];
    ``literal`` divides by ``sqrt(sum_i a_ij^2 b_ik^2)`` and is unbounded.
    """
    if mode not in CORR_MODES:
        raise ValueError(f"mode must be one of {CORR_MODES}, got {mode!r}")
    a = np.asarray(p_a, dtype=np.float64)
    b = np.asarray(p_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"projected views must share an (N, P) shape, got {a.shape} and {b.shape}")
    if center:
        a = a - a.mean(axis=0)
        b = b - b.mean(axis=0)
    _zero_columns(a, "A")
    _zero_columns(b, "B")
    if mode == "cosine":
        na = np.linalg.norm(a, axis=0)
        nb = np.linalg.norm(b, axis=0)
        a_hat, b_hat = a / na, b / nb
        C = a_hat.T @ b_hat
        cache = (a_hat, b_hat, na, nb, center)
    else:
        S = a.T @ b
        Q = (a * a).T @ (b * b)
        if np.any(Q == 0):
            j, k = np.argwhere(Q == 0)[0]
            raise ZeroDivisionError(f"literal normalizer vanishes at entry ({j}, {k})")
        root = np.sqrt(Q)
        C = S / root
        cache = (a, b, S, Q, root, center)
    return CorrelationMatrix(check_finite(C, "correlation matrix"), mode, cache)


def cross_correlation_backward(corr: CorrelationMatrix, grad_c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """dL/dP_A and dL/dP_B given dL/dC."""
    G = np.asarray(grad_c, dtype=np.float64)
    if corr.mode == "cosine":
        a_hat, b_hat, na, nb, center = corr._cache
        g_ah = b_hat @ G.T
        g_bh = a_hat @ G
        g_a = (g_ah - a_hat * (a_hat * g_ah).sum(axis=0)) / na
        g_b = (g_bh - b_hat * (b_hat * g_bh).sum(axis=0)) / nb
    else:
        a, b, S, Q, root, center = corr._cache
        g_s = G / root
        g_q = -G * S / (2.0 * Q * root)
        g_a = b @ g_s.T + 2.0 * a * ((b * b) @ g_q.T)
        g_b = a @ g_s + 2.0 * b * ((a * a) @ g_q)
    if center:
        g_a = g_a - g_a.mean(axis=0)
        g_b = g_b - g_b.mean(axis=0)
    return g_a, g_b


def decorrelation_loss(C, lambda_: float, diag_sign_mode: str = "prose") -> tuple[float, np.ndarray, float, float]:
    """Returns (l_c, dL/dC, invariance term, redundancy term).

    prose:   l_c =  sum_j (1 - C_jj)^2 + lambda * sum_{j!=k} C_jk^2
    literal: l_c = -sum_j (1 - C_jj)^2 + lambda * sum_{j!=k} C_jk^2
    """
    C = np.asarray(getattr(C, "C", C), dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"correlation matrix must be square, got {C.shape}")
    if diag_sign_mode not in DIAG_SIGN_MODES:
        raise ValueError(f"diag_sign_mode must be one of {DIAG_SIGN_MODES}")
    sign = 1.0 if diag_sign_mode == "prose" else -1.0
    diag = np.diag(C)
    off = C.copy()
    np.fill_diagonal(off, 0.0)
    invariance = float(((1.0 - diag) ** 2).sum())
    redundancy = float((off**2).sum())
    grad = 2.0 * lambda_ * off
    grad[np.diag_indices_from(grad)] = -2.0 * sign * (1.0 - diag)
    return sign * invariance + lambda_ * redundancy, grad, invariance, redundancy


def loss_weights(hp: Hyperparams, ablation_mode: str = "joint") -> tuple[float, float]:
    """(weight on L_S, weight on L_C) for an ablation mode."""
    if ablation_mode == "joint":
        return 1.0, hp.alpha
    if ablation_mode == "ls_only":
        return 1.0, 0.0
    if ablation_mode == "lc_only":
        return 0.0, hp.alpha
    raise ValueError(f"ablation_mode must be one of {ABLATION_MODES}, got {ablation_mode!r}")


@dataclass
class JointResult:
    losses: LossBreakdown
    grads: dict[str, np.ndarray]
    projector_caches: tuple = ()


def joint_loss(batch: SentenceBatch, params: ModelParams, hp: Hyperparams, rng: RngState,
               ablation_mode: str = "joint", compute_grads: bool = True) -> JointResult:
    """L_S + alpha * L_C on two dropout views of ``batch`` with gradients for every parameter.

    L_S only reaches the encoder; the projector receives gradient from L_C alone.
    ``compute_grads=False`` skips the backward pass and returns an empty ``grads``.
    """
    if len(batch) < 2:
        raise ValueError("joint loss needs a batch of at least 2 sentences")
    w_s, w_c = loss_weights(hp, ablation_mode)
    view_a, view_b = encode_pair(batch, params.encoder, hp.r_a, hp.r_b, rng)
    l_s, gs_a, gs_b = self_contrastive_loss(view_a.H, view_b.H)

    p_a, cache_a = project(view_a.H, params.projector)
    p_b, cache_b = project(view_b.H, params.projector)
    corr = cross_correlation(p_a, p_b, hp.corr_mode, hp.center)
    l_c, g_c, inv, red = decorrelation_loss(corr.C, hp.lambda_, hp.diag_sign_mode)

    total = w_s * l_s + w_c * l_c
    losses = LossBreakdown(l_s, inv, red, l_c, total, hp.alpha, hp.lambda_)
    caches = (cache_a, cache_b) if w_c != 0.0 else ()
    if not compute_grads:
        return JointResult(losses, {}, caches)

    grads = {k: np.zeros_like(v) for k, v in params.named().items()}
    g_ha = w_s * gs_a
    g_hb = w_s * gs_b
    if w_c != 0.0:
        gp_a, gp_b = cross_correlation_backward(corr, w_c * g_c)
        pg_a, dh_a = project_backward(cache_a, params.projector, gp_a)
        pg_b, dh_b = project_backward(cache_b, params.projector, gp_b)
        for k in pg_a:
            grads[k] = pg_a[k] + pg_b[k]
        g_ha = g_ha + dh_a
        g_hb = g_hb + dh_b
    for view, g in ((view_a, g_ha), (view_b, g_hb)):
        for k, v in encode_backward(view.cache, params.encoder, g).items():
            grads[k] += v
    return JointResult(losses, grads, caches)
