"""Sparse switchable normalization over NCHW tensors.

Per-normalizer statistics (IN, BN, LN, optional GN) are mixed by two
independent gates — one for means, one for variances — whose ratios come
from the radius-constrained simplex projection.  Includes the exact
backward pass, running-statistics bookkeeping for evaluation mode, and
BN folding into a preceding convolution.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidStateError, NotConvergedError
from .simplex import ProjectionResult, SimplexGeometry, sparsestmax, sparsestmax_vjp

NORMALIZER_ORDER = ("IN", "BN", "LN", "GN")

TRAIN = "train"
EVAL = "eval"


def _validate_tensor4(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise InvalidInputError("activation tensor must have shape (N, C, H, W)")
    if x.size == 0:
        raise InvalidInputError("activation tensor must be non-empty")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("activation tensor must be finite")
    return x


def validate_omega(omega) -> tuple[str, ...]:
    omega = tuple(omega)
    if len(omega) < 2:
        raise InvalidInputError("omega must contain at least two normalizers")
    if any(name not in NORMALIZER_ORDER for name in omega):
        raise InvalidInputError(f"unknown normalizer in omega: {omega}")
    if len(set(omega)) != len(omega):
        raise InvalidInputError("omega contains duplicates")
    order = [NORMALIZER_ORDER.index(name) for name in omega]
    if order != sorted(order):
        raise InvalidInputError(f"omega must be ordered as {NORMALIZER_ORDER}")
    return omega


def stats_in(x):
    """Per-(sample, channel) mean and biased variance over (H, W)."""
    x = _validate_tensor4(x)
    return x.mean(axis=(2, 3)), x.var(axis=(2, 3))


def stats_bn(x):
    """Per-channel mean and biased variance over (N, H, W)."""
    x = _validate_tensor4(x)
    return x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3))


def stats_ln(x):
    """Per-sample mean and biased variance over (C, H, W)."""
    x = _validate_tensor4(x)
    return x.mean(axis=(1, 2, 3)), x.var(axis=(1, 2, 3))


def stats_gn(x, groups: int):
    """Per-(sample, group) mean and biased variance over (C/groups, H, W)."""
    x = _validate_tensor4(x)
    n, c, h, w = x.shape
    if groups < 1 or c % groups != 0:
        raise InvalidInputError(f"channels ({c}) not divisible by groups ({groups})")
    xg = x.reshape(n, groups, c // groups, h, w)
    return xg.mean(axis=(2, 3, 4)), xg.var(axis=(2, 3, 4))


def _stat_to_nc(kind: str, stat: np.ndarray, n: int, c: int) -> np.ndarray:
    """Broadcast a per-normalizer statistic to shape (N, C)."""
    if kind == "IN":
        return stat
    if kind == "BN":
        return np.broadcast_to(stat, (n, c))
    if kind == "LN":
        return np.broadcast_to(stat[:, None], (n, c))
    # GN: repeat each group over its channels.
    return np.repeat(stat, c // stat.shape[1], axis=1)


def _nc_to_stat(kind: str, g_nc: np.ndarray, groups: int) -> np.ndarray:
    """Collapse an (N, C) gradient back to the statistic's shape."""
    if kind == "IN":
        return g_nc
    if kind == "BN":
        return g_nc.sum(axis=0)
    if kind == "LN":
        return g_nc.sum(axis=1)
    n, c = g_nc.shape
    return g_nc.reshape(n, groups, c // groups).sum(axis=2)


def _reduce_count(kind: str, shape, groups: int) -> int:
    n, c, h, w = shape
    if kind == "IN":
        return h * w
    if kind == "BN":
        return n * h * w
    if kind == "LN":
        return c * h * w
    return (c // groups) * h * w


@dataclass
class GateParams:
    """Control logits for the mean and variance gates, plus freeze flags.

    A frozen flag is set permanently once the corresponding importance
    ratio has been observed exactly one-hot."""

    z_mean: np.ndarray
    z_var: np.ndarray
    frozen_mean: bool = False
    frozen_var: bool = False


@dataclass
class SsnParams:
    gate: GateParams
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5
    bn_running_mean: np.ndarray = None
    bn_running_var: np.ndarray = None
    mode: str = TRAIN

    def __post_init__(self):
        if self.eps <= 0:
            raise InvalidInputError("eps must be > 0")
        c = self.gamma.shape[0]
        if self.bn_running_mean is None:
            self.bn_running_mean = np.zeros(c)
        if self.bn_running_var is None:
            self.bn_running_var = np.ones(c)
        if np.any(self.bn_running_var < 0):
            raise InvalidInputError("running variances must be >= 0")

    @classmethod
    def init(cls, channels: int, k: int, z_init: float = 1.0, eps: float = 1e-5):
        gate = GateParams(z_mean=np.full(k, z_init), z_var=np.full(k, z_init))
        return cls(gate=gate, gamma=np.ones(channels), beta=np.zeros(channels), eps=eps)


@dataclass(frozen=True)
class LayerConfig:
    """Serializable layer configuration; omega order is fixed and explicit."""

    omega: tuple[str, ...] = ("IN", "BN", "LN")
    eps: float = 1e-5
    gn_groups: int = 32
    momentum: float = 0.1

    def __post_init__(self):
        validate_omega(self.omega)
        if self.eps <= 0:
            raise InvalidInputError("eps must be > 0")
        if not 0.0 <= self.momentum <= 1.0:
            raise InvalidInputError("momentum must be in [0, 1]")

    def to_json(self) -> str:
        return json.dumps({"omega": list(self.omega), "eps": self.eps,
                           "gn_groups": self.gn_groups, "momentum": self.momentum})

    @classmethod
    def from_json(cls, text: str) -> "LayerConfig":
        raw = json.loads(text)
        return cls(omega=tuple(raw["omega"]), eps=float(raw.get("eps", 1e-5)),
                   gn_groups=int(raw.get("gn_groups", 32)),
                   momentum=float(raw.get("momentum", 0.1)))


@dataclass
class SsnCache:
    x: np.ndarray
    omega: tuple[str, ...]
    gn_groups: int
    p_res: ProjectionResult
    pp_res: ProjectionResult
    stats: dict
    mu_nc: np.ndarray
    var_nc: np.ndarray
    inv_std: np.ndarray
    xhat: np.ndarray
    gamma: np.ndarray
    eps: float
    mode: str
    frozen_mean: bool
    frozen_var: bool


def _compute_stat(name: str, x: np.ndarray, gn_groups: int):
    if name == "IN":
        return stats_in(x)
    if name == "BN":
        return stats_bn(x)
    if name == "LN":
        return stats_ln(x)
    return stats_gn(x, gn_groups)


def ssn_forward(x, params: SsnParams, r: float, omega, gn_groups: int = 32):
    """Normalize ``x`` with gate-mixed statistics.

    Both gates are projected independently with the same radius.  Only the
    normalizers with nonzero ratio in either gate have their statistics
    computed, so a one-hot layer touches a single normalizer.  In eval
    mode the BN path reads the running averages.
    """
    x = _validate_tensor4(x)
    omega = validate_omega(omega)
    n, c, h, w = x.shape
    k = len(omega)
    if params.gate.z_mean.shape != (k,) or params.gate.z_var.shape != (k,):
        raise InvalidInputError("gate logits length must match |omega|")
    if params.gamma.shape != (c,) or params.beta.shape != (c,):
        raise InvalidInputError("gamma/beta length must match channel count")
    geom = SimplexGeometry(k)
    p_res = sparsestmax(params.gate.z_mean, r, geom)
    pp_res = sparsestmax(params.gate.z_var, r, geom)
    p, pp = p_res.p, pp_res.p

    stats = {}
    for i, name in enumerate(omega):
        if p[i] == 0.0 and pp[i] == 0.0:
            continue
        if name == "BN" and params.mode == EVAL:
            stats[name] = (params.bn_running_mean, params.bn_running_var)
        else:
            stats[name] = _compute_stat(name, x, gn_groups)

    mu_nc = np.zeros((n, c))
    var_nc = np.zeros((n, c))
    for i, name in enumerate(omega):
        if p[i] != 0.0:
            mu_nc += p[i] * _stat_to_nc(name, stats[name][0], n, c)
        if pp[i] != 0.0:
            var_nc += pp[i] * _stat_to_nc(name, stats[name][1], n, c)

    inv_std = 1.0 / np.sqrt(var_nc + params.eps)
    xhat = (x - mu_nc[:, :, None, None]) * inv_std[:, :, None, None]
    y = params.gamma[None, :, None, None] * xhat + params.beta[None, :, None, None]
    cache = SsnCache(x=x, omega=omega, gn_groups=gn_groups, p_res=p_res,
                     pp_res=pp_res, stats=stats, mu_nc=mu_nc, var_nc=var_nc,
                     inv_std=inv_std, xhat=xhat, gamma=params.gamma.copy(),
                     eps=params.eps, mode=params.mode,
                     frozen_mean=params.gate.frozen_mean,
                     frozen_var=params.gate.frozen_var)
    return y, cache


@dataclass
class SsnGrads:
    x: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    z_mean: np.ndarray
    z_var: np.ndarray


def ssn_backward(cache: SsnCache, upstream) -> SsnGrads:
    """Exact gradients of the normalization wrt inputs, affine parameters
    and both gate logit vectors.

    The gate gradients flow through the projection's vector-Jacobian
    product, so normalizers with zero ratio get exactly-zero logit
    gradients; frozen gates get zeros unconditionally.
    """
    if cache.mode != TRAIN:
        raise InvalidStateError("backward requires a train-mode cache")
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != cache.x.shape:
        raise InvalidInputError("upstream tensor shape must match the input")
    x, omega = cache.x, cache.omega
    n, c, h, w = x.shape
    p, pp = cache.p_res.p, cache.pp_res.p
    s = cache.inv_std

    grad_beta = g.sum(axis=(0, 2, 3))
    grad_gamma = (g * cache.xhat).sum(axis=(0, 2, 3))
    gx_hat = g * cache.gamma[None, :, None, None]

    # Gradients wrt the mixed per-(n, c) statistics.
    g_mu_nc = -s * gx_hat.sum(axis=(2, 3))
    centered = x - cache.mu_nc[:, :, None, None]
    g_var_nc = -0.5 * s ** 3 * (gx_hat * centered).sum(axis=(2, 3))

    grad_x = gx_hat * s[:, :, None, None]
    g_p = np.zeros(len(omega))
    g_pp = np.zeros(len(omega))
    for i, name in enumerate(omega):
        m = _reduce_count(name, x.shape, cache.gn_groups)
        if p[i] != 0.0:
            mean_nc = _stat_to_nc(name, cache.stats[name][0], n, c)
            g_p[i] = float((g_mu_nc * mean_nc).sum())
            stat_grad = _nc_to_stat(name, p[i] * g_mu_nc, cache.gn_groups)
            grad_x += (_stat_to_nc(name, stat_grad, n, c) / m)[:, :, None, None]
        if pp[i] != 0.0:
            var_nc_k = _stat_to_nc(name, cache.stats[name][1], n, c)
            g_pp[i] = float((g_var_nc * var_nc_k).sum())
            stat_grad = _nc_to_stat(name, pp[i] * g_var_nc, cache.gn_groups)
            mean_nc = _stat_to_nc(name, cache.stats[name][0], n, c)
            grad_x += _stat_to_nc(name, stat_grad, n, c)[:, :, None, None] * \
                (2.0 / m) * (x - mean_nc[:, :, None, None])

    zeros = np.zeros(len(omega))
    grad_z_mean = zeros if cache.frozen_mean else sparsestmax_vjp(cache.p_res, g_p)
    grad_z_var = zeros.copy() if cache.frozen_var else sparsestmax_vjp(cache.pp_res, g_pp)
    return SsnGrads(x=grad_x, gamma=grad_gamma, beta=grad_beta,
                    z_mean=grad_z_mean, z_var=grad_z_var)


def update_running_stats(params: SsnParams, batch_mean, batch_var,
                         momentum: float = 0.1) -> SsnParams:
    """Exponential moving average update of the BN running statistics."""
    if not 0.0 <= momentum <= 1.0:
        raise InvalidInputError("momentum must be in [0, 1]")
    params.bn_running_mean = (1.0 - momentum) * params.bn_running_mean + \
        momentum * np.asarray(batch_mean, dtype=np.float64)
    params.bn_running_var = (1.0 - momentum) * params.bn_running_var + \
        momentum * np.asarray(batch_var, dtype=np.float64)
    return params


def select_normalizer(params: SsnParams, omega) -> tuple[str, str]:
    """Hot normalizer ids for the mean and variance gates.

    Only valid once both gates froze (i.e. both ratios went one-hot)."""
    omega = validate_omega(omega)
    if not (params.gate.frozen_mean and params.gate.frozen_var):
        raise NotConvergedError("both gates must be frozen one-hot")
    geom = SimplexGeometry(len(omega))
    p = sparsestmax(params.gate.z_mean, geom.r_circum, geom).p
    pp = sparsestmax(params.gate.z_var, geom.r_circum, geom).p
    return omega[int(np.argmax(p))], omega[int(np.argmax(pp))]


def fold_bn_into_affine(conv_weight, conv_bias, params: SsnParams, omega=("IN", "BN", "LN")):
    """Fold a BN-selected layer into the preceding convolution.

    Returns (weight', bias') such that conv(x, weight', bias') equals the
    normalized conv output computed from the running statistics."""
    omega = validate_omega(omega)
    choice = select_normalizer(params, omega)
    if choice != ("BN", "BN"):
        raise InvalidStateError(f"both gates must select BN, got {choice}")
    w = np.asarray(conv_weight, dtype=np.float64)
    c_out = w.shape[0]
    b = np.zeros(c_out) if conv_bias is None else np.asarray(conv_bias, dtype=np.float64)
    scale = params.gamma / np.sqrt(params.bn_running_var + params.eps)
    w_folded = w * scale[:, None, None, None]
    b_folded = (b - params.bn_running_mean) * scale + params.beta
    return w_folded, b_folded


def conv2d(x, weight, bias=None) -> np.ndarray:
    """Minimal direct convolution (stride 1, no padding); verification only."""
    x = _validate_tensor4(x)
    w = np.asarray(weight, dtype=np.float64)
    windows = np.lib.stride_tricks.sliding_window_view(x, w.shape[2:], axis=(2, 3))
    y = np.einsum("nchwij,ocij->nohw", windows, w)
    if bias is not None:
        y += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return y


def save_checkpoint(params: SsnParams, path) -> None:
    """Serialize parameters as a JSON map of named real arrays."""
    payload = {
        "z_mean": params.gate.z_mean.tolist(),
        "z_var": params.gate.z_var.tolist(),
        "frozen_mean": params.gate.frozen_mean,
        "frozen_var": params.gate.frozen_var,
        "gamma": params.gamma.tolist(),
        "beta": params.beta.tolist(),
        "bn_running_mean": params.bn_running_mean.tolist(),
        "bn_running_var": params.bn_running_var.tolist(),
        "eps": params.eps,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> SsnParams:
    with open(path) as fh:
        raw = json.load(fh)
    gate = GateParams(z_mean=np.array(raw["z_mean"], dtype=np.float64),
                      z_var=np.array(raw["z_var"], dtype=np.float64),
                      frozen_mean=bool(raw["frozen_mean"]),
                      frozen_var=bool(raw["frozen_var"]))
    return SsnParams(gate=gate, gamma=np.array(raw["gamma"], dtype=np.float64),
                     beta=np.array(raw["beta"], dtype=np.float64),
                     eps=float(raw["eps"]),
                     bn_running_mean=np.array(raw["bn_running_mean"], dtype=np.float64),
                     bn_running_var=np.array(raw["bn_running_var"], dtype=np.float64))


def benchmark_forward(n: int, c: int, h: int, w: int, reps: int, seed: int = 0,
                      omega=("IN", "BN", "LN")) -> dict:
    """Median eval-mode forward time: all-normalizer mixture vs one-hot.

    Returns combined/sparse medians in milliseconds, their ratio and a
    flag set when timing spread exceeded 20% of the median."""
    if min(n, c, h, w) < 1:
        raise InvalidInputError("benchmark dims must be positive")
    if reps < 1:
        raise InvalidInputError("reps must be >= 1")
    omega = validate_omega(omega)
    k = len(omega)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, c, h, w))
    geom = SimplexGeometry(k)

    sparse = SsnParams.init(c, k)
    sparse.mode = EVAL
    # Select IN so the sparse path computes exactly one batch statistic.
    hot = omega.index("IN") if "IN" in omega else 0
    sparse.gate.z_mean = np.where(np.arange(k) == hot, 10.0, 0.0)
    sparse.gate.z_var = sparse.gate.z_mean.copy()
    sparse.gate.frozen_mean = sparse.gate.frozen_var = True

    combined = SsnParams.init(c, k)
    combined.mode = EVAL

    def _time(params, r):
        out = []
        for _ in range(reps):
            t0 = time.perf_counter()
            ssn_forward(x, params, r, omega)
            out.append((time.perf_counter() - t0) * 1e3)
        return out

    # Warm-up excluded from timing.
    ssn_forward(x, combined, 0.0, omega)
    ssn_forward(x, sparse, geom.r_circum, omega)
    combined_ts = _time(combined, 0.0)
    sparse_ts = _time(sparse, geom.r_circum)
    combined_ms = float(np.median(combined_ts))
    sparse_ms = float(np.median(sparse_ts))
    spread = max(np.ptp(combined_ts) / combined_ms, np.ptp(sparse_ts) / max(sparse_ms, 1e-9))
    return {
        "combined_ms": combined_ms,
        "sparse_ms": sparse_ms,
        "ratio": combined_ms / sparse_ms,
        "timing_variance_flagged": bool(spread > 0.2),
    }
