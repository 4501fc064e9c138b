"""Reference numeric implementation of the multi-scale feature abstractor
and the training loss stack, with analytic gradients verifiable against
central finite differences.

Everything here is plain float64 numpy: a fixed-length query bank is pooled
from the last feature scale, cross-attends over the concatenated scales,
and is projected through a two-layer MLP. No optimizer and no training
loop; this module is a forward+gradient reference only.

Assumptions (configurable where noted): standard per-head query/key/value
projections and no positional term are applied inside the attention block;
head count defaults to 8; the activation defaults to exact GELU.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

QUERY_TOKENS = 256  # contract at full scale (P = 1024)
DEFAULT_LAYERS = (7, 14, 23)
DICE_EPS = 1e-6
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class FeaturePyramid:
    """Ordered multi-scale features, each (P, d_v) with P a perfect square."""

    scales: tuple[np.ndarray, ...]
    layers: tuple[int, ...] = DEFAULT_LAYERS

    def __post_init__(self):
        if not self.scales:
            raise ValueError("pyramid needs at least one scale")
        shape = self.scales[0].shape
        for f in self.scales:
            if f.ndim != 2 or f.shape != shape:
                raise ValueError("all scales must share (P, d_v) shape")
        p = shape[0]
        if math.isqrt(p) ** 2 != p:
            raise ValueError(f"token count {p} is not a perfect square")

    @property
    def tokens(self) -> int:
        return self.scales[0].shape[0]

    @property
    def channels(self) -> int:
        return self.scales[0].shape[1]


@dataclass(frozen=True)
class AbstractorParams:
    """MHA projections plus the two-layer output MLP."""

    heads: int
    wq: np.ndarray  # (d_v, d_v)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray  # (d_v, d_ff)
    w2: np.ndarray  # (d_ff, d)
    activation: str = "gelu"

    def __post_init__(self):
        d_v = self.wq.shape[0]
        if d_v % self.heads != 0:
            raise ValueError(f"d_v={d_v} not divisible by {self.heads} heads")
        for name in ("wq", "wk", "wv", "wo"):
            m = getattr(self, name)
            if m.shape != (d_v, d_v):
                raise ValueError(f"{name} must be ({d_v}, {d_v}), got {m.shape}")
        if self.w1.shape[0] != d_v:
            raise ValueError("w1 rows must match d_v")
        if self.w2.shape[0] != self.w1.shape[1]:
            raise ValueError("w2 rows must match w1 columns")
        for name in ("wq", "wk", "wv", "wo", "w1", "w2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    @classmethod
    def init_random(
        cls, d_v: int, d_ff: int, d_out: int, heads: int = 8, rng=None
    ) -> "AbstractorParams":
        rng = np.random.default_rng(rng)
        scale = 1.0 / math.sqrt(d_v)
        return cls(
            heads=heads,
            wq=rng.normal(0, scale, (d_v, d_v)),
            wk=rng.normal(0, scale, (d_v, d_v)),
            wv=rng.normal(0, scale, (d_v, d_v)),
            wo=rng.normal(0, scale, (d_v, d_v)),
            w1=rng.normal(0, scale, (d_v, d_ff)),
            w2=rng.normal(0, 1.0 / math.sqrt(d_ff), (d_ff, d_out)),
        )

    PARAM_NAMES = ("wq", "wk", "wv", "wo", "w1", "w2")


@dataclass(frozen=True)
class LossWeights:
    txt: float = 1.0
    seg: float = 1.0
    bce: float = 2.0
    dice: float = 0.5

    def __post_init__(self):
        if min(self.txt, self.seg, self.bce, self.dice) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class SegTokenBank:
    """Learnable segmentation token embeddings (N, d)."""

    tokens: np.ndarray

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ValueError("token bank must be (N >= 1, d)")

    @classmethod
    def init_random(cls, d: int, n: int = 6, rng=None) -> "SegTokenBank":
        rng = np.random.default_rng(rng)
        return cls(rng.normal(0, 1.0 / math.sqrt(d), (n, d)))


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / math.sqrt(
        2.0 * math.pi
    )


_ACTIVATIONS = {
    "gelu": (_gelu, _gelu_grad),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float)),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
}


def pool_query(last_scale: np.ndarray, stride: int = 2) -> np.ndarray:
    """Average-pool the last scale's token grid to form the query bank.

    Tokens are laid out row-major on a sqrt(P) x sqrt(P) grid; stride-2
    pooling maps P=1024 to the 256-token query contract. Smaller P is
    allowed for desk-scale tests as long as the grid divides evenly.
    """
    p, d_v = last_scale.shape
    g = math.isqrt(p)
    if g * g != p:
        raise ValueError(f"token count {p} is not a perfect square")
    if g % stride != 0:
        raise ValueError(f"grid side {g} not divisible by pooling stride {stride}")
    grid = last_scale.reshape(g, g, d_v)
    pooled = grid.reshape(g // stride, stride, g // stride, stride, d_v).mean(axis=(1, 3))
    return pooled.reshape((g // stride) ** 2, d_v)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(pyramid: FeaturePyramid, params: AbstractorParams) -> dict:
    d_v = pyramid.channels
    if params.wq.shape[0] != d_v:
        raise ValueError(f"params expect d_v={params.wq.shape[0]}, pyramid has {d_v}")
    act, _ = _ACTIVATIONS[params.activation]
    q_in = pool_query(pyramid.scales[-1])
    f = np.vstack(pyramid.scales)  # (S*P, d_v)
    h = params.heads
    dh = d_v // h
    qp = q_in @ params.wq
    kp = f @ params.wk
    vp = f @ params.wv
    nq = q_in.shape[0]
    attn = np.empty((h, nq, f.shape[0]))
    ctx = np.empty((nq, d_v))
    for i in range(h):
        s = slice(i * dh, (i + 1) * dh)
        scores = qp[:, s] @ kp[:, s].T / math.sqrt(dh)
        attn[i] = _softmax_rows(scores)
        ctx[:, s] = attn[i] @ vp[:, s]
    v_out = ctx @ params.wo
    pre = v_out @ params.w1
    o = act(pre) @ params.w2
    return {
        "q_in": q_in, "f": f, "qp": qp, "kp": kp, "vp": vp,
        "attn": attn, "ctx": ctx, "v_out": v_out, "pre": pre, "o": o,
    }


def msfa_forward(
    pyramid: FeaturePyramid, params: AbstractorParams
) -> tuple[np.ndarray, np.ndarray]:
    """Run the abstractor; returns (output tokens, attention maps).

    The output has a fixed token count set by the pooled query bank
    (256 when P = 1024) regardless of how many scales are stacked.
    Attention maps have shape (heads, n_query, n_scales * P) and each row
    is a probability distribution over the keys.
    """
    cache = _forward_cache(pyramid, params)
    return cache["o"], cache["attn"]


def msfa_param_grads(
    pyramid: FeaturePyramid, params: AbstractorParams, d_out: np.ndarray
) -> dict[str, np.ndarray]:
    """Analytic gradients of sum(output * d_out) w.r.t. every parameter."""
    cache = _forward_cache(pyramid, params)
    _, act_grad = _ACTIVATIONS[params.activation]
    h = params.heads
    d_v = pyramid.channels
    dh = d_v // h

    z = _ACTIVATIONS[params.activation][0](cache["pre"])
    dw2 = z.T @ d_out
    dz = d_out @ params.w2.T
    dpre = dz * act_grad(cache["pre"])
    dw1 = cache["v_out"].T @ dpre
    dv_out = dpre @ params.w1.T
    dwo = cache["ctx"].T @ dv_out
    dctx = dv_out @ params.wo.T

    dqp = np.zeros_like(cache["qp"])
    dkp = np.zeros_like(cache["kp"])
    dvp = np.zeros_like(cache["vp"])
    for i in range(h):
        s = slice(i * dh, (i + 1) * dh)
        a = cache["attn"][i]
        dctx_h = dctx[:, s]
        da = dctx_h @ cache["vp"][:, s].T
        dvp[:, s] = a.T @ dctx_h
        dscores = a * (da - (da * a).sum(axis=1, keepdims=True))
        dqp[:, s] = dscores @ cache["kp"][:, s] / math.sqrt(dh)
        dkp[:, s] = dscores.T @ cache["qp"][:, s] / math.sqrt(dh)
    return {
        "wq": cache["q_in"].T @ dqp,
        "wk": cache["f"].T @ dkp,
        "wv": cache["f"].T @ dvp,
        "wo": dwo,
        "w1": dw1,
        "w2": dw2,
    }


# --- losses -----------------------------------------------------------------

def dice_loss(pred: np.ndarray, gt: np.ndarray, eps: float = DICE_EPS) -> float:
    """Soft DICE loss averaged over mask channels, in [0, 1].

    pred and gt are (..., H, W) with a leading channel axis when multi-class
    one-hot targets are scored; probabilities must lie in [0, 1].
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if pred.min() < 0 or pred.max() > 1:
        raise ValueError("pred values must be in [0, 1]")
    p = pred.reshape(-1, pred.shape[-2] * pred.shape[-1]) if pred.ndim > 2 else pred.reshape(1, -1)
    g = gt.reshape(p.shape)
    inter = (p * g).sum(axis=1)
    denom = p.sum(axis=1) + g.sum(axis=1)
    return float(np.mean(1.0 - (2.0 * inter + eps) / (denom + eps)))


def dice_grad(pred: np.ndarray, gt: np.ndarray, eps: float = DICE_EPS) -> np.ndarray:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    p = pred.reshape(-1, pred.shape[-2] * pred.shape[-1]) if pred.ndim > 2 else pred.reshape(1, -1)
    g = gt.reshape(p.shape)
    inter = (p * g).sum(axis=1, keepdims=True)
    denom = p.sum(axis=1, keepdims=True) + g.sum(axis=1, keepdims=True)
    grad = -(2.0 * g * (denom + eps) - (2.0 * inter + eps)) / (denom + eps) ** 2
    return (grad / p.shape[0]).reshape(pred.shape)


def bce_loss(pred: np.ndarray, gt: np.ndarray, clamp: float = BCE_CLAMP) -> float:
    """Mean per-pixel binary cross-entropy, with probability clamping."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p = np.clip(pred, clamp, 1.0 - clamp)
    return float(np.mean(-(gt * np.log(p) + (1.0 - gt) * np.log(1.0 - p))))


def bce_grad(pred: np.ndarray, gt: np.ndarray, clamp: float = BCE_CLAMP) -> np.ndarray:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    p = np.clip(pred, clamp, 1.0 - clamp)
    return (p - gt) / (p * (1.0 - p)) / pred.size


def seg_loss(pred: np.ndarray, gt: np.ndarray, weights: LossWeights = LossWeights()) -> float:
    """Segmentation loss: weighted BCE + DICE (defaults 2.0 / 0.5)."""
    return weights.bce * bce_loss(pred, gt) + weights.dice * dice_loss(pred, gt)


def total_loss(txt_ce: float, seg: float, weights: LossWeights = LossWeights()) -> float:
    """Overall objective: weighted text CE + segmentation loss (defaults 1.0 / 1.0)."""
    if not (math.isfinite(txt_ce) and math.isfinite(seg)):
        raise ValueError("loss components must be finite")
    return weights.txt * txt_ce + weights.seg * seg


def ce_loss(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean token-level cross entropy of target ids under row softmax."""
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[0] != targets.shape[0]:
        raise ValueError(
            f"{logits.shape[0]} logit rows vs {targets.shape[0]} targets (misaligned)"
        )
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= logits.shape[1]:
        raise ValueError("target id outside vocabulary")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logz - shifted[np.arange(len(targets)), targets]))


def ce_grad(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets, dtype=np.int64)
    probs = _softmax_rows(logits)
    grad = probs.copy()
    grad[np.arange(len(targets)), targets] -= 1.0
    return grad / len(targets)


# --- verification harness ---------------------------------------------------

def finite_difference(fn, x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar function over every entry."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        hi = fn(x)
        xf[i] = orig - step
        lo = fn(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.abs(analytic).max(initial=0), np.abs(numeric).max(initial=0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0) / denom)


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.rel_error <= self.tolerance


def grad_check(
    op: str,
    rng=None,
    tolerance: float = 1e-4,
    step: float = 1e-3,
) -> list[GradCheckResult]:
    """Compare analytic gradients with central finite differences.

    op is one of dice, bce, ce, linear, msfa; fixtures stay at or below
    16 tokens so the element-wise differencing is cheap.
    """
    rng = np.random.default_rng(rng)
    results: list[GradCheckResult] = []
    if op == "dice":
        pred = rng.uniform(0.1, 0.9, (2, 4, 4))
        gt = (rng.uniform(size=(2, 4, 4)) > 0.5).astype(float)
        numeric = finite_difference(lambda p: dice_loss(p, gt), pred, step)
        results.append(GradCheckResult("dice", _rel_error(dice_grad(pred, gt), numeric), tolerance))
    elif op == "bce":
        pred = rng.uniform(0.1, 0.9, (4, 4))
        gt = (rng.uniform(size=(4, 4)) > 0.5).astype(float)
        numeric = finite_difference(lambda p: bce_loss(p, gt), pred, step)
        results.append(GradCheckResult("bce", _rel_error(bce_grad(pred, gt), numeric), tolerance))
    elif op == "ce":
        logits = rng.normal(size=(3, 5))
        targets = rng.integers(0, 5, size=3)
        numeric = finite_difference(lambda l: ce_loss(l, targets), logits, step)
        results.append(GradCheckResult("ce", _rel_error(ce_grad(logits, targets), numeric), tolerance))
    elif op == "linear":
        # exact to machine precision for a linear map
        w = rng.normal(size=(3, 2))
        x = rng.normal(size=(4, 3))
        r = rng.normal(size=(4, 2))
        analytic = x.T @ r
        numeric = finite_difference(lambda m: float(np.sum((x @ m) * r)), w, step)
        results.append(GradCheckResult("linear", _rel_error(analytic, numeric), tolerance))
    elif op == "msfa":
        d_v, d_ff, d_out = 4, 5, 3
        scales = tuple(rng.normal(size=(16, d_v)) for _ in range(2))
        pyramid = FeaturePyramid(scales=scales, layers=(14, 23))
        params = AbstractorParams.init_random(d_v, d_ff, d_out, heads=2, rng=rng)
        r = rng.normal(size=msfa_forward(pyramid, params)[0].shape)
        grads = msfa_param_grads(pyramid, params, r)
        for name in AbstractorParams.PARAM_NAMES:
            def loss_of(m, _name=name):
                kwargs = {n: getattr(params, n) for n in AbstractorParams.PARAM_NAMES}
                kwargs[_name] = m
                swapped = AbstractorParams(heads=params.heads, activation=params.activation, **kwargs)
                return float(np.sum(msfa_forward(pyramid, swapped)[0] * r))

            numeric = finite_difference(loss_of, getattr(params, name).copy(), step)
            results.append(
                GradCheckResult(f"msfa/{name}", _rel_error(grads[name], numeric), tolerance)
            )
    else:
        raise ValueError(f"unknown op {op!r}")
    return results


# --- fixture serialization --------------------------------------------------

def save_matrix(path, name: str, matrix: np.ndarray) -> None:
    """Row-major float32 binary with a one-line JSON header."""
    arr = np.ascontiguousarray(matrix, dtype=np.float32)
    header = json.dumps({"shape": list(arr.shape), "dtype": "float32", "name": name})
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + b"\n")
        f.write(arr.tobytes())


def load_matrix(path) -> tuple[str, np.ndarray]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header["dtype"] != "float32":
            raise ValueError(f"unsupported dtype {header['dtype']}")
        data = np.frombuffer(f.read(), dtype=np.float32).reshape(header["shape"])
    return header["name"], data


def run_check_suite(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Full invariant + gradient suite; returns (name, passed, detail) rows."""
    rng = np.random.default_rng(seed)
    rows: list[tuple[str, bool, str]] = []

    d_v = 8
    params = AbstractorParams.init_random(d_v, 12, 6, heads=2, rng=rng)
    for n_scales in (1, 2, 3):
        scales = tuple(rng.normal(size=(1024, d_v)) for _ in range(n_scales))
        out, attn = msfa_forward(FeaturePyramid(scales=scales), params)
        ok = out.shape[0] == QUERY_TOKENS
        rows.append((f"fixed-length output, {n_scales} scale(s)", ok, f"tokens={out.shape[0]}"))
        row_sums = attn.sum(axis=-1)
        ok = bool(np.all(np.abs(row_sums - 1) < 1e-6) and np.all(attn >= 0))
        rows.append((f"attention simplex, {n_scales} scale(s)", ok,
                     f"max |row sum - 1| = {np.abs(row_sums - 1).max():.2e}"))

    f = rng.normal(size=(16, d_v))
    single, _ = msfa_forward(FeaturePyramid(scales=(f,), layers=(23,)), params)
    doubled, _ = msfa_forward(FeaturePyramid(scales=(f, f), layers=(14, 23)), params)
    err = float(np.abs(single - doubled).max())
    rows.append(("duplicate-scale invariance", err < 1e-9, f"max diff = {err:.2e}"))

    vocab = 7
    ce_err = abs(ce_loss(np.zeros((4, vocab)), np.array([0, 1, 2, 3])) - math.log(vocab))
    rows.append(("uniform-logit ce = ln(vocab)", ce_err < 1e-9, f"err = {ce_err:.2e}"))

    for op in ("linear", "dice", "bce", "ce", "msfa"):
        for res in grad_check(op, rng=rng):
            rows.append((f"grad check: {res.name}", res.passed, f"rel err = {res.rel_error:.2e}"))
    return rows
