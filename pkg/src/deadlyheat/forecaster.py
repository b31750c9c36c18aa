"""Attention-based all-cause mortality forecaster in plain numpy.

Input per sample is a ``(m + 3, T)`` matrix: normalized mortality, ``m``
normalized meteorological rows and two positional rows.  Output is ``h``
normalized mortality values for the days after the window.

Architecture: linear embedding -> ``blocks`` x [multi-head self-attention,
residual, layer norm, feed-forward, residual, layer norm] -> mean pool over
time -> two-layer MLP head.  All gradients are hand-derived.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DivergenceError, InsufficientDataError

__all__ = [
    "TransformerConfig",
    "TransformerWeights",
    "AdamState",
    "TrainResult",
    "positional_embedding",
    "init_weights",
    "attention_block",
    "forward",
    "mse_loss",
    "loss_and_gradient",
    "gradient",
    "build_samples",
    "train",
    "train_on_samples",
    "predict_horizon",
    "origin_envelopes",
    "save_checkpoint",
    "load_checkpoint",
]

FORMAT_VERSION = 1
LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class TransformerConfig:
    T: int = 14
    h: int = 5
    m: int = 4
    d_model: int = 32
    blocks: int = 2
    heads: int = 2
    mlp_hidden: int = 32
    lr: float = 1e-4
    epochs: int = 300
    batch_size: int = 64
    seed: int = 0
    init_scale: float = 0.05

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.T < 1 or self.h < 1:
            raise ValueError("T and h must be positive")
        if min(self.m, self.blocks, self.mlp_hidden, self.epochs, self.batch_size) < 0 or self.batch_size == 0:
            raise ValueError("invalid size parameter")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    @property
    def channels(self) -> int:
        return self.m + 3


def param_shapes(cfg: TransformerConfig) -> dict[str, tuple[int, ...]]:
    D, F, H, dk = cfg.d_model, cfg.mlp_hidden, cfg.heads, cfg.d_k
    shapes = {"embed.W": (cfg.channels, D), "embed.b": (D,)}
    for i in range(cfg.blocks):
        p = f"blocks.{i}."
        shapes.update({
            p + "W_q": (H, D, dk), p + "W_k": (H, D, dk), p + "W_v": (H, D, dk),
            p + "merge.W": (D, D), p + "merge.b": (D,),
            p + "ln1.gamma": (D,), p + "ln1.beta": (D,),
            p + "ffn.W1": (D, F), p + "ffn.b1": (F,),
            p + "ffn.W2": (F, D), p + "ffn.b2": (D,),
            p + "ln2.gamma": (D,), p + "ln2.beta": (D,),
        })
    shapes.update({"head.W1": (D, F), "head.b1": (F,), "head.W2": (F, cfg.h), "head.b2": (cfg.h,)})
    return shapes


class TransformerWeights:
    """Named parameter views over one contiguous float64 buffer."""

    def __init__(self, config: TransformerConfig, flat: np.ndarray | None = None):
        self.config = config
        self.shapes = param_shapes(config)
        size = sum(math.prod(s) for s in self.shapes.values())
        if flat is None:
            flat = np.zeros(size)
        if flat.shape != (size,):
            raise ValueError(f"flat buffer has shape {flat.shape}, expected ({size},)")
        self.flat = np.ascontiguousarray(flat, dtype=np.float64)
        self.params: dict[str, np.ndarray] = {}
        off = 0
        for name, shape in self.shapes.items():
            n = math.prod(shape)
            self.params[name] = self.flat[off:off + n].reshape(shape)
            off += n

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def copy(self) -> "TransformerWeights":
        return TransformerWeights(self.config, self.flat.copy())

    def zeros_like(self) -> "TransformerWeights":
        return TransformerWeights(self.config)

    def block(self, i: int) -> dict[str, np.ndarray]:
        p = f"blocks.{i}."
        return {k[len(p):]: v for k, v in self.params.items() if k.startswith(p)}


def init_weights(config: TransformerConfig, seed: int | None = None) -> TransformerWeights:
    """Uniform(-s, s) matrices, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    w = TransformerWeights(config)
    s = config.init_scale
    for name, arr in w.params.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            arr[...] = 1.0
        elif leaf.startswith("W"):
            arr[...] = rng.uniform(-s, s, size=arr.shape)
    return w


def positional_embedding(T: int) -> np.ndarray:
    t = np.arange(T)
    return np.vstack([np.sin(2 * np.pi * t / T), np.cos(2 * np.pi * t / T)])


# ---------------------------------------------------------------- layers


def _gelu(x):
    th = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x * x))
    return 0.5 * x * (1.0 + th), th


def _gelu_grad(x, th):
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _GELU_C * (1.0 + 0.134145 * x * x)


def _layer_norm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv)


def _layer_norm_back(dy, gamma, cache):
    xhat, inv = cache
    g = dy * gamma
    dx = inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True))
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def _softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x, heads):
    B, T, _ = x.shape
    return x.reshape(B, T, heads, -1).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dk)


def _flat_proj(W):
    # (heads, D, dk) -> (D, heads*dk) so one matmul serves all heads
    H, D, dk = W.shape
    return W.transpose(1, 0, 2).reshape(D, H * dk)


def _unflat_proj(G, heads):
    D, Hdk = G.shape
    return G.reshape(D, heads, Hdk // heads).transpose(1, 0, 2)


def _block_forward(X, bw, heads, cache=None):
    dk = bw["W_q"].shape[2]
    Q = _split_heads(X @ _flat_proj(bw["W_q"]), heads)
    K = _split_heads(X @ _flat_proj(bw["W_k"]), heads)
    V = _split_heads(X @ _flat_proj(bw["W_v"]), heads)
    A = _softmax(Q @ K.transpose(0, 1, 3, 2) / math.sqrt(dk))
    O = _merge_heads(A @ V)
    R1 = X + O @ bw["merge.W"] + bw["merge.b"]
    H1, ln1 = _layer_norm(R1, bw["ln1.gamma"], bw["ln1.beta"])
    U = H1 @ bw["ffn.W1"] + bw["ffn.b1"]
    G, th = _gelu(U)
    R2 = H1 + G @ bw["ffn.W2"] + bw["ffn.b2"]
    H2, ln2 = _layer_norm(R2, bw["ln2.gamma"], bw["ln2.beta"])
    if cache is not None:
        cache.update(X=X, Q=Q, K=K, V=V, A=A, O=O, H1=H1, ln1=ln1, U=U, G=G, th=th, ln2=ln2)
    return H2


def _block_backward(dH2, bw, gw, c, heads):
    dk = bw["W_q"].shape[2]
    dR2, gw["ln2.gamma"][...], gw["ln2.beta"][...] = _layer_norm_back(dH2, bw["ln2.gamma"], c["ln2"])
    D = dR2.shape[-1]
    F = bw["ffn.W1"].shape[1]
    gw["ffn.W2"][...] = c["G"].reshape(-1, F).T @ dR2.reshape(-1, D)
    gw["ffn.b2"][...] = dR2.sum(axis=(0, 1))
    dU = (dR2 @ bw["ffn.W2"].T) * _gelu_grad(c["U"], c["th"])
    gw["ffn.W1"][...] = c["H1"].reshape(-1, D).T @ dU.reshape(-1, F)
    gw["ffn.b1"][...] = dU.sum(axis=(0, 1))
    dH1 = dR2 + dU @ bw["ffn.W1"].T
    dR1, gw["ln1.gamma"][...], gw["ln1.beta"][...] = _layer_norm_back(dH1, bw["ln1.gamma"], c["ln1"])
    gw["merge.W"][...] = c["O"].reshape(-1, D).T @ dR1.reshape(-1, D)
    gw["merge.b"][...] = dR1.sum(axis=(0, 1))
    dO = _split_heads(dR1 @ bw["merge.W"].T, heads)
    A, Q, K, V = c["A"], c["Q"], c["K"], c["V"]
    dA = dO @ V.transpose(0, 1, 3, 2)
    dV = A.transpose(0, 1, 3, 2) @ dO
    dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) / math.sqrt(dk)
    dQ = dS @ K
    dK = dS.transpose(0, 1, 3, 2) @ Q
    X2 = c["X"].reshape(-1, D)
    dX = dR1.copy()
    for name, dP in (("W_q", dQ), ("W_k", dK), ("W_v", dV)):
        dPf = _merge_heads(dP)
        gw[name][...] = _unflat_proj(X2.T @ dPf.reshape(-1, D), heads)
        dX += dPf @ _flat_proj(bw[name]).T
    return dX


def attention_block(X: np.ndarray, block_weights: dict, heads: int, return_attention: bool = False):
    """One encoder block on ``(T, d_model)`` or ``(B, T, d_model)`` input."""
    single = X.ndim == 2
    Xb = X[None] if single else X
    cache: dict = {}
    out = _block_forward(Xb, block_weights, heads, cache)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite activations in attention block")
    out = out[0] if single else out
    if return_attention:
        A = cache["A"][0] if single else cache["A"]
        return out, A
    return out


def _as_batch(inputs: np.ndarray, cfg: TransformerConfig) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (cfg.channels, cfg.T):
        raise ValueError(f"input shape {np.shape(inputs)} does not match ({cfg.channels}, {cfg.T})")
    return x.transpose(0, 2, 1)  # (B, T, C)


def _forward(w: TransformerWeights, xb: np.ndarray, caches: list | None = None):
    cfg = w.config
    H = xb @ w["embed.W"] + w["embed.b"]
    for i in range(cfg.blocks):
        c = {} if caches is not None else None
        H = _block_forward(H, w.block(i), cfg.heads, c)
        if caches is not None:
            caches.append(c)
    P = H.mean(axis=1)
    U = P @ w["head.W1"] + w["head.b1"]
    G, th = _gelu(U)
    Y = G @ w["head.W2"] + w["head.b2"]
    if caches is not None:
        caches.append(dict(P=P, U=U, G=G, th=th))
    return Y


def forward(weights: TransformerWeights, inputs: np.ndarray) -> np.ndarray:
    """Predictions for one ``(C, T)`` sample (shape ``(h,)``) or a ``(B, C, T)`` batch."""
    single = np.ndim(inputs) == 2
    Y = _forward(weights, _as_batch(inputs, weights.config))
    if not np.all(np.isfinite(Y)):
        raise DivergenceError("non-finite forward output")
    return Y[0] if single else Y


def mse_loss(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    return float(np.mean((pred - target) ** 2))


def loss_and_gradient(weights: TransformerWeights, inputs: np.ndarray, targets: np.ndarray,
                      out: TransformerWeights | None = None) -> tuple[float, TransformerWeights]:
    """Mean batch MSE and its exact gradient with respect to every parameter."""
    cfg = weights.config
    xb = _as_batch(inputs, cfg)
    tgt = np.asarray(targets, dtype=float).reshape(xb.shape[0], cfg.h)
    caches: list = []
    Y = _forward(weights, xb, caches)
    diff = Y - tgt
    loss = float(np.mean(diff ** 2))
    g = out if out is not None else weights.zeros_like()

    B, T = xb.shape[0], cfg.T
    dY = 2.0 * diff / diff.size
    hc = caches[-1]
    g["head.W2"][...] = hc["G"].T @ dY
    g["head.b2"][...] = dY.sum(axis=0)
    dU = (dY @ weights["head.W2"].T) * _gelu_grad(hc["U"], hc["th"])
    g["head.W1"][...] = hc["P"].T @ dU
    g["head.b1"][...] = dU.sum(axis=0)
    dP = dU @ weights["head.W1"].T
    dH = np.broadcast_to(dP[:, None, :] / T, (B, T, cfg.d_model))
    for i in reversed(range(cfg.blocks)):
        dH = _block_backward(dH, weights.block(i), g.block(i), caches[i], cfg.heads)
    g["embed.W"][...] = xb.reshape(-1, cfg.channels).T @ dH.reshape(-1, cfg.d_model)
    g["embed.b"][...] = dH.sum(axis=(0, 1))
    if not (math.isfinite(loss) and np.all(np.isfinite(g.flat))):
        raise DivergenceError("non-finite loss or gradient")
    return loss, g


def gradient(weights: TransformerWeights, batch) -> TransformerWeights:
    inputs, targets = batch
    if len(inputs) == 0:
        raise ValueError("empty batch")
    return loss_and_gradient(weights, inputs, targets)[1]


# ---------------------------------------------------------------- data


def origin_envelopes(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-index (min of strictly earlier values, max up to and including).

    Index 0 has no earlier value; its lower bound is set to its own value.
    Works column-wise on 2-D input.
    """
    x = np.asarray(x, dtype=float)
    lo = np.empty_like(x)
    lo[0] = x[0]
    lo[1:] = np.minimum.accumulate(x[:-1], axis=0)
    hi = np.maximum.accumulate(x, axis=0)
    return lo, hi


def _scale_offset(lo, hi):
    # flat envelope: unit scale centered so that the constant maps to 0.5
    span = hi - lo
    flat = span <= 0
    scale = np.where(flat, 1.0, span)
    offset = np.where(flat, lo - 0.5, lo)
    return scale, offset


def build_samples(deaths: np.ndarray, meteo: np.ndarray, origins, config: TransformerConfig,
                  with_targets: bool = True):
    """Windows ending at each origin index, normalized with that origin's envelope.

    Returns ``(inputs (N, C, T), targets (N, h) or None, scale (N,), offset (N,))``;
    ``scale``/``offset`` de-normalize mortality as ``y * scale + offset``.
    """
    origins = np.asarray(origins, dtype=int)
    T, h = config.T, config.h
    deaths = np.asarray(deaths, dtype=float)
    meteo = np.asarray(meteo, dtype=float).reshape(len(deaths), config.m)
    if origins.size and (origins.min() < max(T - 1, 1)):
        raise InsufficientDataError(f"origin needs at least {max(T, 2)} days of history")
    last = origins.max() + (h if with_targets else 0) if origins.size else 0
    if origins.size and last >= len(deaths):
        raise InsufficientDataError("targets extend beyond the series")
    feats = np.column_stack([deaths, meteo])  # (n, 1+m)
    lo, hi = origin_envelopes(feats)
    scale, offset = _scale_offset(lo[origins], hi[origins])  # (N, 1+m)
    win = origins[:, None] + np.arange(-T + 1, 1)[None, :]  # (N, T)
    x = (feats[win] - offset[:, None, :]) / scale[:, None, :]  # (N, T, 1+m)
    pos = np.broadcast_to(positional_embedding(T).T, (len(origins), T, 2))
    inputs = np.concatenate([x, pos], axis=2).transpose(0, 2, 1).copy()
    if not np.all(np.isfinite(inputs)):
        raise InsufficientDataError("missing values inside an input window; impute first")
    targets = None
    if with_targets:
        tw = origins[:, None] + np.arange(1, h + 1)[None, :]
        targets = (deaths[tw] - offset[:, :1]) / scale[:, :1]
        if not np.all(np.isfinite(targets)):
            raise InsufficientDataError("missing values in targets; impute first")
    return inputs, targets, scale[:, 0], offset[:, 0]


def training_origins(n: int, config: TransformerConfig) -> np.ndarray:
    first = max(config.T - 1, 1)
    return np.arange(first, n - config.h)


# ---------------------------------------------------------------- optimization


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))

    def update(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.step += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.step)
        v_hat = self.v / (1 - self.beta2 ** self.step)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    weights: TransformerWeights
    loss_trace: list[float]
    optimizer: AdamState
    epochs: int
    seed: int


def train_on_samples(inputs: np.ndarray, targets: np.ndarray, config: TransformerConfig,
                     prior_weights: TransformerWeights | None = None, seed: int | None = None) -> TrainResult:
    """Adam on mean-squared error over seeded mini-batch shuffles."""
    seed = config.seed if seed is None else seed
    n = len(inputs)
    if n == 0:
        raise InsufficientDataError("no training samples")
    w = prior_weights.copy() if prior_weights is not None else init_weights(config, seed)
    if prior_weights is not None and prior_weights.config != config:
        w = TransformerWeights(config, prior_weights.flat.copy())
    rng = np.random.default_rng(seed)
    opt = AdamState.zeros(w.flat.size)
    grad = w.zeros_like()
    trace = []
    bs = config.batch_size
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            loss, _ = loss_and_gradient(w, inputs[idx], targets[idx], out=grad)
            total += loss * len(idx)
            opt.update(w.flat, grad.flat, config.lr)
        epoch_loss = total / n
        if not math.isfinite(epoch_loss):
            raise DivergenceError("training loss became non-finite")
        trace.append(epoch_loss)
    return TrainResult(w, trace, opt, config.epochs, seed)


def train(series, prior_weights: TransformerWeights | None = None,
          config: TransformerConfig = TransformerConfig(), *, stop: int | None = None,
          seed: int | None = None) -> TrainResult:
    """Train on every window whose target span ends before index ``stop``."""
    stop = len(series) if stop is None else stop
    origins = training_origins(stop, config)
    if origins.size == 0:
        raise InsufficientDataError(f"need at least {max(config.T, 2) + config.h} days, got {stop}")
    inputs, targets, _, _ = build_samples(series.deaths[:stop], series.meteo[:stop], origins, config)
    return train_on_samples(inputs, targets, config, prior_weights, seed)


def predict_horizon(weights: TransformerWeights, series, t: int) -> np.ndarray:
    """De-normalized forecasts for days ``t+1 .. t+h`` from data through index ``t``."""
    cfg = weights.config
    if t < max(cfg.T - 1, 1) or t >= len(series):
        raise InsufficientDataError(f"origin {t} lacks {cfg.T} days of history")
    inputs, _, scale, offset = build_samples(series.deaths[:t + 1], series.meteo[:t + 1], [t], cfg,
                                             with_targets=False)
    y = forward(weights, inputs[0])
    return y * scale[0] + offset[0]


# ---------------------------------------------------------------- checkpoints


def _tensor(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def save_checkpoint(path, result: TrainResult | TransformerWeights, *, extra: dict | None = None) -> Path:
    if isinstance(result, TransformerWeights):
        weights, opt, seed, epoch = result, None, result.config.seed, None
    else:
        weights, opt, seed, epoch = result.weights, result.optimizer, result.seed, result.epochs
    obj = {
        "format_version": FORMAT_VERSION,
        "config": dataclasses.asdict(weights.config),
        "weights": {k: _tensor(v) for k, v in weights.params.items()},
        "optimizer": None if opt is None else {
            "name": "adam", "step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "m": _tensor(opt.m), "v": _tensor(opt.v),
        },
        "seed": seed,
        "epoch": epoch,
    }
    if extra:
        obj.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, separators=(",", ":")) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> tuple[TransformerWeights, AdamState | None, dict]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {obj.get('format_version')}")
    cfg = TransformerConfig(**obj["config"])
    w = TransformerWeights(cfg)
    for name, t in obj["weights"].items():
        arr = np.asarray(t["data"], dtype=np.float64).reshape(t["shape"])
        w[name][...] = arr
    opt = None
    if obj.get("optimizer"):
        o = obj["optimizer"]
        opt = AdamState(np.asarray(o["m"]["data"]), np.asarray(o["v"]["data"]), o["step"],
                        o["beta1"], o["beta2"], o["eps"])
    return w, opt, obj
