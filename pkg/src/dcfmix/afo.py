"""Attention-gated fusion of visual and depth feature maps.

Two small feature tensors are standardized per channel, concatenated, and run
through pre-norm transformer blocks. A 1x1 convolution plus sigmoid turns the
fused tokens into a single-channel gate in (0,1) that re-weights both input
features. Iterating the whole step is the multimodal communication loop.

Forward and backward passes are written out by hand in numpy; grad_check
compares the analytic gradients against central finite differences. Not an
autodiff engine: only the layers used here carry gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf, expit

from .errors import InvalidArgument, IoFailure, ShapeMismatch

LN_EPS = 1e-5
STD_EPS = 1e-5
MLP_RATIO = 4
DEFAULT_BLOCKS = 2
# Gate values are clamped to the widest open interval float64 can express,
# so downstream code may rely on 0 < gamma < 1 even under saturation.
GAMMA_MIN = float(np.nextafter(0.0, 1.0))
GAMMA_MAX = float(np.nextafter(1.0, 0.0))

# Flattening order for checkpoints and gradient vectors.
BLOCK_FIELDS = (
    "wq",
    "wk",
    "wv",
    "ln1_g",
    "ln1_b",
    "w1",
    "b1",
    "w2",
    "b2",
    "ln2_g",
    "ln2_b",
)


@dataclass(eq=False)
class FeatureMap:
    """Dense (C, H, W) real feature tensor."""

    data: np.ndarray

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64, copy=True)
        if d.ndim != 3:
            raise ShapeMismatch(f"feature map must be (C, H, W), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise InvalidArgument("feature map must be finite")
        d.flags.writeable = False
        self.data = d

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(eq=False)
class GateMap:
    """Single-channel (1, H, W) spatial gate, every value strictly in (0,1)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64, copy=True)
        if d.ndim != 3 or d.shape[0] != 1:
            raise ShapeMismatch(f"gate map must be (1, H, W), got {d.shape}")
        if np.any(d <= 0.0) or np.any(d >= 1.0):
            raise InvalidArgument("gate values must lie strictly in (0, 1)")
        d.flags.writeable = False
        self.data = d


@dataclass(eq=False)
class BlockParams:
    """One pre-norm transformer block: single-head attention then a GELU MLP.

    Query/key/value projections carry no biases; the MLP widens d -> 4d -> d.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray

    def __post_init__(self):
        for name in BLOCK_FIELDS:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))


def _block_shapes(d: int) -> dict[str, tuple[int, ...]]:
    return {
        "wq": (d, d),
        "wk": (d, d),
        "wv": (d, d),
        "ln1_g": (d,),
        "ln1_b": (d,),
        "w1": (d, MLP_RATIO * d),
        "b1": (MLP_RATIO * d,),
        "w2": (MLP_RATIO * d, d),
        "b2": (d,),
        "ln2_g": (d,),
        "ln2_b": (d,),
    }


@dataclass(eq=False)
class FusionParams:
    """All learnable state: transformer blocks plus the 1x1 gate convolution."""

    blocks: list[BlockParams]
    conv_w: np.ndarray
    conv_b: float

    def __post_init__(self):
        self.conv_w = np.array(self.conv_w, dtype=np.float64)
        if self.conv_w.ndim != 1:
            raise ShapeMismatch("conv_w must be a flat per-channel vector")
        self.conv_b = float(self.conv_b)
        if not self.blocks:
            raise InvalidArgument("need at least one transformer block")
        d = self.fused_channels
        want = _block_shapes(d)
        for i, blk in enumerate(self.blocks):
            for name, shape in want.items():
                got = getattr(blk, name).shape
                if got != shape:
                    raise ShapeMismatch(
                        f"block {i} {name}: expected {shape}, got {got}"
                    )

    @property
    def fused_channels(self) -> int:
        return self.conv_w.shape[0]


def init_params(
    c_f: int, n_blocks: int = DEFAULT_BLOCKS, seed: int = 0, scale: float = 0.02
) -> FusionParams:
    """Random Gaussian projections, identity layer norms, near-neutral gate."""
    d = 2 * c_f
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(n_blocks):
        blocks.append(
            BlockParams(
                wq=rng.normal(0.0, scale, (d, d)),
                wk=rng.normal(0.0, scale, (d, d)),
                wv=rng.normal(0.0, scale, (d, d)),
                ln1_g=np.ones(d),
                ln1_b=np.zeros(d),
                w1=rng.normal(0.0, scale, (d, MLP_RATIO * d)),
                b1=np.zeros(MLP_RATIO * d),
                w2=rng.normal(0.0, scale, (MLP_RATIO * d, d)),
                b2=np.zeros(d),
                ln2_g=np.ones(d),
                ln2_b=np.zeros(d),
            )
        )
    return FusionParams(
        blocks=blocks, conv_w=rng.normal(0.0, scale, d), conv_b=0.0
    )


def zero_params(c_f: int, n_blocks: int = DEFAULT_BLOCKS) -> FusionParams:
    """All projections and the gate conv at zero, layer norms at identity.

    Makes attention_fuse the identity and the gate a constant 0.5.
    """
    d = 2 * c_f
    blocks = []
    for _ in range(n_blocks):
        blocks.append(
            BlockParams(
                wq=np.zeros((d, d)),
                wk=np.zeros((d, d)),
                wv=np.zeros((d, d)),
                ln1_g=np.ones(d),
                ln1_b=np.zeros(d),
                w1=np.zeros((d, MLP_RATIO * d)),
                b1=np.zeros(MLP_RATIO * d),
                w2=np.zeros((MLP_RATIO * d, d)),
                b2=np.zeros(d),
                ln2_g=np.ones(d),
                ln2_b=np.zeros(d),
            )
        )
    return FusionParams(blocks=blocks, conv_w=np.zeros(d), conv_b=0.0)


# ---------------------------------------------------------------------------
# primitive forward/backward pairs


def _gelu(u):
    return 0.5 * u * (1.0 + erf(u / np.sqrt(2.0)))


def _gelu_grad(u):
    phi_cdf = 0.5 * (1.0 + erf(u / np.sqrt(2.0)))
    phi_pdf = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
    return phi_cdf + u * phi_pdf


def _standardize_forward(f, eps=STD_EPS):
    # per channel over the spatial extent, batch-norm style epsilon
    mu = f.mean(axis=(1, 2), keepdims=True)
    s = np.sqrt(f.var(axis=(1, 2), keepdims=True) + eps)
    return (f - mu) / s, s


def _standardize_backward(dy, xhat, s):
    dmu = dy.mean(axis=(1, 2), keepdims=True)
    dproj = (dy * xhat).mean(axis=(1, 2), keepdims=True)
    return (dy - dmu - xhat * dproj) / s


def _ln_forward(x, g, b, eps=LN_EPS):
    # x: (T, d), normalized per token
    mu = x.mean(axis=1, keepdims=True)
    s = np.sqrt(x.var(axis=1, keepdims=True) + eps)
    xhat = (x - mu) / s
    return g * xhat + b, xhat, s


def _ln_backward(dy, xhat, s, g):
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dmu = dxhat.mean(axis=1, keepdims=True)
    dproj = (dxhat * xhat).mean(axis=1, keepdims=True)
    return (dxhat - dmu - xhat * dproj) / s, dg, db


def _softmax_rows(scores):
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _block_forward(x, bp: BlockParams):
    d = x.shape[1]
    h1, xhat1, s1 = _ln_forward(x, bp.ln1_g, bp.ln1_b)
    q = h1 @ bp.wq
    k = h1 @ bp.wk
    v = h1 @ bp.wv
    a = _softmax_rows(q @ k.T / np.sqrt(d))
    x_mid = x + a @ v
    h2, xhat2, s2 = _ln_forward(x_mid, bp.ln2_g, bp.ln2_b)
    u = h2 @ bp.w1 + bp.b1
    act = _gelu(u)
    x_out = x_mid + act @ bp.w2 + bp.b2
    cache = {
        "h1": h1,
        "xhat1": xhat1,
        "s1": s1,
        "q": q,
        "k": k,
        "v": v,
        "a": a,
        "xhat2": xhat2,
        "s2": s2,
        "h2": h2,
        "u": u,
        "act": act,
    }
    return x_out, cache


def _block_backward(dx_out, bp: BlockParams, cache):
    d = bp.wq.shape[0]
    # MLP sub-layer (residual carries dx_out through unchanged)
    dm = dx_out
    dw2 = cache["act"].T @ dm
    db2 = dm.sum(axis=0)
    du = (dm @ bp.w2.T) * _gelu_grad(cache["u"])
    dw1 = cache["h2"].T @ du
    db1 = du.sum(axis=0)
    dh2 = du @ bp.w1.T
    dx_ln2, dg2, dbe2 = _ln_backward(dh2, cache["xhat2"], cache["s2"], bp.ln2_g)
    dx_mid = dx_out + dx_ln2
    # attention sub-layer
    dattn = dx_mid
    da = dattn @ cache["v"].T
    dv = cache["a"].T @ dattn
    a = cache["a"]
    ds = a * (da - (da * a).sum(axis=1, keepdims=True))
    dq = ds @ cache["k"] / np.sqrt(d)
    dk = ds.T @ cache["q"] / np.sqrt(d)
    dwq = cache["h1"].T @ dq
    dwk = cache["h1"].T @ dk
    dwv = cache["h1"].T @ dv
    dh1 = dq @ bp.wq.T + dk @ bp.wk.T + dv @ bp.wv.T
    dx_ln1, dg1, dbe1 = _ln_backward(dh1, cache["xhat1"], cache["s1"], bp.ln1_g)
    dx = dx_mid + dx_ln1
    grads = {
        "wq": dwq,
        "wk": dwk,
        "wv": dwv,
        "ln1_g": dg1,
        "ln1_b": dbe1,
        "w1": dw1,
        "b1": db1,
        "w2": dw2,
        "b2": db2,
        "ln2_g": dg2,
        "ln2_b": dbe2,
    }
    return dx, grads


def _step_forward(vis, dep, params: FusionParams):
    """One fuse -> attend -> gate -> re-weight pass on raw (C, H, W) arrays."""
    d = params.fused_channels
    h, w = vis.shape[1], vis.shape[2]
    svis, s_v = _standardize_forward(vis)
    sdep, s_d = _standardize_forward(dep)
    fused = np.concatenate([svis, sdep], axis=0)
    x = fused.reshape(d, h * w).T
    block_caches = []
    for bp in params.blocks:
        x, c = _block_forward(x, bp)
        block_caches.append(c)
    z = x @ params.conv_w + params.conv_b
    gamma = np.clip(expit(z), GAMMA_MIN, GAMMA_MAX).reshape(1, h, w)
    cache = {
        "vis": vis,
        "dep": dep,
        "svis": svis,
        "s_v": s_v,
        "sdep": sdep,
        "s_d": s_d,
        "tokens_out": x,
        "gamma": gamma,
        "blocks": block_caches,
    }
    return vis * gamma, dep * gamma, gamma, cache


def _step_backward(d_vis_out, d_dep_out, params: FusionParams, cache, grads):
    vis, dep, gamma = cache["vis"], cache["dep"], cache["gamma"]
    d = params.fused_channels
    c_vis = vis.shape[0]
    h, w = vis.shape[1], vis.shape[2]

    d_vis = d_vis_out * gamma
    d_dep = d_dep_out * gamma
    dgamma = (d_vis_out * vis).sum(axis=0) + (d_dep_out * dep).sum(axis=0)
    g = gamma[0]
    dz = (dgamma * g * (1.0 - g)).reshape(h * w)

    x_out = cache["tokens_out"]
    grads["conv_w"] += x_out.T @ dz
    grads["conv_b"] += dz.sum()
    dx = np.outer(dz, params.conv_w)
    for bp, bc, gb in zip(
        reversed(params.blocks), reversed(cache["blocks"]), reversed(grads["blocks"])
    ):
        dx, block_grads = _block_backward(dx, bp, bc)
        for name, val in block_grads.items():
            gb[name] += val

    dfused = dx.T.reshape(d, h, w)
    d_vis += _standardize_backward(dfused[:c_vis], cache["svis"], cache["s_v"])
    d_dep += _standardize_backward(dfused[c_vis:], cache["sdep"], cache["s_d"])
    return d_vis, d_dep


def _zero_grads(params: FusionParams) -> dict:
    return {
        "blocks": [
            {name: np.zeros_like(getattr(bp, name)) for name in BLOCK_FIELDS}
            for bp in params.blocks
        ],
        "conv_w": np.zeros_like(params.conv_w),
        "conv_b": 0.0,
    }


def _forward(vis, dep, params: FusionParams, iterations: int):
    caches = []
    for _ in range(iterations):
        vis, dep, _, cache = _step_forward(vis, dep, params)
        caches.append(cache)
    return vis, dep, caches


def _backward(d_vis, d_dep, params: FusionParams, caches):
    grads = _zero_grads(params)
    for cache in reversed(caches):
        d_vis, d_dep = _step_backward(d_vis, d_dep, params, cache, grads)
    grads["f_vis"] = d_vis
    grads["f_depth"] = d_dep
    return grads


# ---------------------------------------------------------------------------
# public ops on FeatureMap wrappers


def _data(f) -> np.ndarray:
    return f.data if isinstance(f, FeatureMap) else np.asarray(f, dtype=np.float64)


def standardize(f: FeatureMap) -> FeatureMap:
    """Per-channel zero mean, unit variance over the spatial extent."""
    xhat, _ = _standardize_forward(_data(f))
    return FeatureMap(xhat)


def fuse_concat(f_vis: FeatureMap, f_depth: FeatureMap) -> FeatureMap:
    """Channel-concatenate two standardized features, visual channels first."""
    vis, dep = _data(f_vis), _data(f_depth)
    if vis.shape[1:] != dep.shape[1:]:
        raise ShapeMismatch(f"spatial dims differ: {vis.shape[1:]} vs {dep.shape[1:]}")
    return FeatureMap(np.concatenate([vis, dep], axis=0))


def attention_fuse(f_fuse_in: FeatureMap, params: FusionParams) -> FeatureMap:
    """Run the fused map through the transformer blocks, token per pixel."""
    fused = _data(f_fuse_in)
    d = params.fused_channels
    if fused.shape[0] != d:
        raise ShapeMismatch(f"expected {d} fused channels, got {fused.shape[0]}")
    _, h, w = fused.shape
    x = fused.reshape(d, h * w).T
    for bp in params.blocks:
        x, _ = _block_forward(x, bp)
    return FeatureMap(x.T.reshape(d, h, w))


def gate(f_fuse_out: FeatureMap, params: FusionParams) -> GateMap:
    """1x1 convolution to one channel, then sigmoid, clamped open at 0 and 1."""
    fused = _data(f_fuse_out)
    d = params.fused_channels
    if fused.shape[0] != d:
        raise ShapeMismatch(f"expected {d} fused channels, got {fused.shape[0]}")
    z = np.tensordot(params.conv_w, fused, axes=(0, 0)) + params.conv_b
    return GateMap(np.clip(expit(z), GAMMA_MIN, GAMMA_MAX)[None])


def apply_gate(
    f_vis: FeatureMap, f_depth: FeatureMap, gamma: GateMap
) -> tuple[FeatureMap, FeatureMap]:
    """Broadcast-multiply the single-channel gate into both features."""
    vis, dep, g = _data(f_vis), _data(f_depth), gamma.data
    if vis.shape[1:] != g.shape[1:] or dep.shape[1:] != g.shape[1:]:
        raise ShapeMismatch(
            f"gate {g.shape[1:]} vs features {vis.shape[1:]}, {dep.shape[1:]}"
        )
    return FeatureMap(vis * g), FeatureMap(dep * g)


def multimodal_communicate(
    f_vis: FeatureMap, f_depth: FeatureMap, params: FusionParams, iterations: int = 1
) -> tuple[FeatureMap, FeatureMap]:
    """Iterate standardize -> concat -> attend -> gate -> re-weight.

    The gate multiplies the raw (unstandardized) features, so identity-ish
    parameters scale both features by exactly 0.5 per iteration.
    """
    if iterations < 1:
        raise InvalidArgument("iterations must be >= 1")
    vis, dep = _data(f_vis), _data(f_depth)
    if vis.shape[1:] != dep.shape[1:]:
        raise ShapeMismatch(f"spatial dims differ: {vis.shape[1:]} vs {dep.shape[1:]}")
    if vis.shape[0] + dep.shape[0] != params.fused_channels:
        raise ShapeMismatch(
            f"params fuse {params.fused_channels} channels, features supply "
            f"{vis.shape[0]} + {dep.shape[0]}"
        )
    vis, dep, _ = _forward(vis, dep, params, iterations)
    return FeatureMap(vis), FeatureMap(dep)


# ---------------------------------------------------------------------------
# gradient checking


def squared_sum_head(vis_out, dep_out):
    """Default scalar head: sum of squared outputs and its gradients."""
    value = float((vis_out**2).sum() + (dep_out**2).sum())
    return value, 2.0 * vis_out, 2.0 * dep_out


def zero_head(vis_out, dep_out):
    """Constant-zero head; every gradient should vanish."""
    return 0.0, np.zeros_like(vis_out), np.zeros_like(dep_out)


def params_to_vector(params: FusionParams) -> np.ndarray:
    """Flatten all parameters in checkpoint order."""
    parts = []
    for bp in params.blocks:
        for name in BLOCK_FIELDS:
            parts.append(getattr(bp, name).ravel())
    parts.append(params.conv_w.ravel())
    parts.append(np.array([params.conv_b]))
    return np.concatenate(parts)


def vector_to_params(vec: np.ndarray, like: FusionParams) -> FusionParams:
    """Rebuild parameters from a flat vector, shapes taken from `like`."""
    vec = np.asarray(vec, dtype=np.float64)
    shapes = _block_shapes(like.fused_channels)
    per_block = sum(int(np.prod(s)) for s in shapes.values())
    expected = per_block * len(like.blocks) + like.fused_channels + 1
    if vec.size != expected:
        raise InvalidArgument(f"vector has {vec.size} entries, expected {expected}")
    pos = 0
    blocks = []
    for _ in like.blocks:
        fields = {}
        for name in BLOCK_FIELDS:
            size = int(np.prod(shapes[name]))
            fields[name] = vec[pos : pos + size].reshape(shapes[name])
            pos += size
        blocks.append(BlockParams(**fields))
    d = like.fused_channels
    conv_w = vec[pos : pos + d]
    pos += d
    conv_b = float(vec[pos])
    return FusionParams(blocks=blocks, conv_w=conv_w, conv_b=conv_b)


def _grads_to_vector(grads: dict, params: FusionParams) -> np.ndarray:
    parts = []
    for gb in grads["blocks"]:
        for name in BLOCK_FIELDS:
            parts.append(gb[name].ravel())
    parts.append(grads["conv_w"].ravel())
    parts.append(np.array([grads["conv_b"]]))
    return np.concatenate(parts)


def grad_check(
    params: FusionParams,
    f_vis,
    f_depth,
    loss_head=None,
    iterations: int = 1,
    step: float = 1e-4,
) -> float:
    """Max mismatch between analytic and central finite-difference gradients.

    The loss head maps the final (vis, depth) outputs to a scalar and its
    output gradients; default is the sum of squared outputs. Every parameter
    component and every input component is perturbed by +-step. The error for
    a component is |analytic - numeric| / max(1, |analytic|, |numeric|), so
    near-zero gradients are compared absolutely.
    """
    if loss_head is None:
        loss_head = squared_sum_head
    vis0 = _data(f_vis)
    dep0 = _data(f_depth)

    vis_out, dep_out, caches = _forward(vis0, dep0, params, iterations)
    _, d_vis_out, d_dep_out = loss_head(vis_out, dep_out)
    grads = _backward(d_vis_out, d_dep_out, params, caches)
    analytic = np.concatenate(
        [
            _grads_to_vector(grads, params),
            grads["f_vis"].ravel(),
            grads["f_depth"].ravel(),
        ]
    )

    def loss_value(p, vis, dep):
        vo, do, _ = _forward(vis, dep, p, iterations)
        return loss_head(vo, do)[0]

    theta0 = params_to_vector(params)
    numeric = np.empty_like(analytic)
    for i in range(theta0.size):
        plus = theta0.copy()
        plus[i] += step
        minus = theta0.copy()
        minus[i] -= step
        numeric[i] = (
            loss_value(vector_to_params(plus, params), vis0, dep0)
            - loss_value(vector_to_params(minus, params), vis0, dep0)
        ) / (2.0 * step)
    def input_loss(vis, dep):
        return loss_value(params, vis, dep)

    pos = theta0.size
    for arr0, rebuild in (
        (vis0, lambda a: input_loss(a, dep0)),
        (dep0, lambda a: input_loss(vis0, a)),
    ):
        flat = arr0.ravel()
        for i in range(flat.size):
            plus = flat.copy()
            plus[i] += step
            minus = flat.copy()
            minus[i] -= step
            numeric[pos] = (
                rebuild(plus.reshape(arr0.shape)) - rebuild(minus.reshape(arr0.shape))
            ) / (2.0 * step)
            pos += 1

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float((np.abs(analytic - numeric) / denom).max())


# ---------------------------------------------------------------------------
# checkpointing


def save_params(params: FusionParams, path) -> Path:
    """Write a flat little-endian float32 blob plus a JSON shape sidecar."""
    path = Path(path)
    vec = params_to_vector(params).astype("<f4")
    tensors = []
    for i, bp in enumerate(params.blocks):
        for name in BLOCK_FIELDS:
            tensors.append(
                {"name": f"block{i}.{name}", "shape": list(getattr(bp, name).shape)}
            )
    tensors.append({"name": "conv_w", "shape": [params.fused_channels]})
    tensors.append({"name": "conv_b", "shape": []})
    meta = {
        "dtype": "<f4",
        "fused_channels": params.fused_channels,
        "n_blocks": len(params.blocks),
        "tensors": tensors,
    }
    try:
        path.write_bytes(vec.tobytes())
        sidecar = path.with_name(path.name + ".json")
        sidecar.write_text(json.dumps(meta, indent=1))
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_params(path) -> FusionParams:
    """Reload a checkpoint written by save_params."""
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    try:
        meta = json.loads(sidecar.read_text())
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    itemsize = np.dtype(meta["dtype"]).itemsize
    if len(raw) % itemsize:
        raise IoFailure(f"checkpoint {path} is truncated ({len(raw)} bytes)")
    vec = np.frombuffer(raw, dtype=meta["dtype"]).astype(np.float64)
    expected = sum(int(np.prod(t["shape"])) for t in meta["tensors"])
    if vec.size != expected:
        raise IoFailure(
            f"checkpoint holds {vec.size} values, sidecar describes {expected}"
        )
    d = int(meta["fused_channels"])
    template = zero_params(d // 2, n_blocks=int(meta["n_blocks"]))
    if d % 2 or params_to_vector(template).size != vec.size:
        raise IoFailure("sidecar shapes do not describe a valid parameter set")
    return vector_to_params(vec, template)
