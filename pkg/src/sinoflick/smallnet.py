"""Lightweight convolutional denoiser with hand-rolled backprop and Adam.

Architecture (single input/output plane, C hidden channels, default 48):

    conv 3x3 (1 -> C, zero pad 1) -> leaky rectifier (slope 0.2)
    conv 3x3 (C -> C, zero pad 1) -> leaky rectifier (slope 0.2)
    conv 1x1 (C -> 1)

The network predicts the noise residual: denoised = x - net(x).  Training
pairs are two sinograms with the same content and different noise; the
loss regresses each denoised member onto the other plus a consistency
term tying the two denoised outputs together (see
:func:`loss_and_grad`).

Gradients are exact reverse-mode differentiation through the compiled
convolution kernels; no ML framework is involved.  Everything is
deterministic given the seed, and dtype follows the parameter arrays
(float32 for production training, float64 available for tight gradient
verification).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .core import KIND_PARAMS, Pcg32, read_container, write_container

LEAKY_SLOPE = 0.2

# Serialization / seeding order of the parameter tensors.
PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass
class NetParams:
    """Weights and biases; shapes fix the architecture above."""

    w1: np.ndarray  # (C, 1, 3, 3)
    b1: np.ndarray  # (C,)
    w2: np.ndarray  # (C, C, 3, 3)
    b2: np.ndarray  # (C,)
    w3: np.ndarray  # (C,)
    b3: np.ndarray  # (1,)

    def __post_init__(self):
        c = self.w1.shape[0]
        expected = {
            "w1": (c, 1, 3, 3),
            "b1": (c,),
            "w2": (c, c, 3, 3),
            "b2": (c,),
            "w3": (c,),
            "b3": (1,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    @property
    def channels(self) -> int:
        return self.w1.shape[0]

    @property
    def dtype(self):
        return self.w1.dtype

    def tensors(self):
        return [getattr(self, name) for name in PARAM_ORDER]

    def copy(self) -> "NetParams":
        return NetParams(*(t.copy() for t in self.tensors()))


def param_count(channels: int) -> int:
    """Total trainable parameters: 9C + C + 9C^2 + C + C + 1."""
    return 9 * channels**2 + 12 * channels + 1


def net_init(seed: int, channels: int = 48, dtype=np.float32) -> NetParams:
    """Seeded initialization: weights uniform in +-sqrt(6 / fan_in), biases 0.

    Weight values are drawn from a single PCG32 stream in PARAM_ORDER
    (biases are zero and consume no draws), flattening each tensor in row
    major order, so a seed fully determines the parameters.
    """
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    rng = Pcg32(seed)

    def uniform_tensor(shape, fan_in):
        bound = math.sqrt(6.0 / fan_in)
        flat = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(flat.shape[0]):
            flat[i] = bound * (2.0 * rng.random() - 1.0)
        return flat.reshape(shape).astype(dtype)

    c = channels
    return NetParams(
        w1=uniform_tensor((c, 1, 3, 3), 9),
        b1=np.zeros(c, dtype=dtype),
        w2=uniform_tensor((c, c, 3, 3), 9 * c),
        b2=np.zeros(c, dtype=dtype),
        w3=uniform_tensor((c,), c),
        b3=np.zeros(1, dtype=dtype),
    )


def _pad(x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        x = x[np.newaxis]
    c, h, w = x.shape
    out = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    out[:, 1 : h + 1, 1 : w + 1] = x
    return out


@dataclass
class Workspace:
    """Reusable padded activation/gradient buffers for one input shape.

    Kernels only ever write buffer interiors, so the zero borders set at
    construction persist; reusing a workspace across training steps avoids
    reallocating (and re-zeroing) several MB per step.
    """

    xpad_a: np.ndarray
    a1pad_a: np.ndarray
    a2pad_a: np.ndarray
    out_a: np.ndarray
    xpad_b: np.ndarray
    a1pad_b: np.ndarray
    a2pad_b: np.ndarray
    out_b: np.ndarray
    dpad: np.ndarray
    d1pad: np.ndarray
    g_a: np.ndarray
    g_b: np.ndarray


def make_workspace(channels: int, shape: tuple[int, int], dtype=np.float32) -> Workspace:
    h, w = shape
    c = channels

    def padded(ch):
        return np.zeros((ch, h + 2, w + 2), dtype=dtype)

    def plane():
        return np.empty((h, w), dtype=dtype)

    return Workspace(
        xpad_a=padded(1), a1pad_a=padded(c), a2pad_a=padded(c), out_a=plane(),
        xpad_b=padded(1), a1pad_b=padded(c), a2pad_b=padded(c), out_b=plane(),
        dpad=padded(c), d1pad=padded(c), g_a=plane(), g_b=plane(),
    )


def _forward_into(params: NetParams, x: np.ndarray, xpad, a1pad, a2pad, out):
    """Forward pass into caller-provided padded planes (borders stay zero)."""
    dtype = params.dtype
    slope = dtype.type(LEAKY_SLOPE)
    h, w = x.shape
    xpad[0, 1 : h + 1, 1 : w + 1] = x
    _kernels.conv3x3(xpad, params.w1, params.b1, slope, True, a1pad)
    _kernels.conv3x3(a1pad, params.w2, params.b2, slope, True, a2pad)
    _kernels.conv1x1(a2pad, params.w3, dtype.type(params.b3[0]), out)


def _forward_full(params: NetParams, x: np.ndarray):
    """Forward pass retaining the activations needed for backprop."""
    dtype = params.dtype
    x = np.ascontiguousarray(x, dtype=dtype)
    h, w = x.shape
    c = params.channels
    xpad = np.zeros((1, h + 2, w + 2), dtype=dtype)
    a1pad = np.zeros((c, h + 2, w + 2), dtype=dtype)
    a2pad = np.zeros((c, h + 2, w + 2), dtype=dtype)
    out = np.empty((h, w), dtype=dtype)
    _forward_into(params, x, xpad, a1pad, a2pad, out)
    return xpad, a1pad, a2pad, out


def net_forward(params: NetParams, x: np.ndarray) -> np.ndarray:
    """Predicted noise residual for a normalized input matrix."""
    return _forward_full(params, x)[3]


def zero_grads(params: NetParams) -> NetParams:
    return NetParams(*(np.zeros_like(t) for t in params.tensors()))


def _backward_branch(params: NetParams, xpad, a1pad, a2pad, grad_out, dpad, d1pad, grads: NetParams):
    """Accumulate d(loss)/d(params) for one branch given d(loss)/d(output)."""
    dtype = params.dtype
    slope = dtype.type(LEAKY_SLOPE)
    grad_out = np.ascontiguousarray(grad_out, dtype=dtype)

    dw3 = np.empty_like(params.w3)
    db3 = _kernels.conv1x1_bwd(a2pad, params.w3, grad_out, slope, dw3, dpad)

    dw2 = np.empty_like(params.w2)
    db2 = np.empty_like(params.b2)
    _kernels.conv3x3_grad_w(a1pad, dpad, dw2, db2)

    # Input gradient of conv2 as a gather: convolve the padded output
    # gradient with the channel-transposed, spatially flipped kernels.
    w2_t = np.ascontiguousarray(params.w2.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    _kernels.conv3x3_bwd_input(dpad, w2_t, a1pad, slope, d1pad)

    dw1 = np.empty_like(params.w1)
    db1 = np.empty_like(params.b1)
    _kernels.conv3x3_grad_w(xpad, d1pad, dw1, db1)

    grads.w1 += dw1
    grads.b1 += db1
    grads.w2 += dw2
    grads.b2 += db2
    grads.w3 += dw3
    grads.b3 += np.asarray([db3], dtype=dtype)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0  # weight of the consistency term
    scale: float = 1.0  # normalization applied upstream; recorded for reports

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


def loss_and_grad(
    params: NetParams,
    s_a: np.ndarray,
    s_b: np.ndarray,
    cfg: LossConfig,
    workspace: Workspace | None = None,
):
    """Loss and parameter gradients for one training pair.

    With D_A = s_a - net(s_a) and D_B = s_b - net(s_b):

        loss = 0.5*mean((D_A - s_b)^2) + 0.5*mean((D_B - s_a)^2)
             + alpha*mean((D_A - D_B)^2)

    Returns ``(loss, grads)`` with grads shaped like the parameters.
    Pass a :class:`Workspace` to reuse buffers across steps (single-owner,
    like the rest of the training state).
    """
    if s_a.shape != s_b.shape:
        raise ValueError(f"pair shapes differ: {s_a.shape} vs {s_b.shape}")
    dtype = params.dtype
    s_a = np.ascontiguousarray(s_a, dtype=dtype)
    s_b = np.ascontiguousarray(s_b, dtype=dtype)
    ws = workspace if workspace is not None else make_workspace(params.channels, s_a.shape, dtype)
    _forward_into(params, s_a, ws.xpad_a, ws.a1pad_a, ws.a2pad_a, ws.out_a)
    _forward_into(params, s_b, ws.xpad_b, ws.a1pad_b, ws.a2pad_b, ws.out_b)
    loss = _kernels.pair_loss_grad(s_a, s_b, ws.out_a, ws.out_b, float(cfg.alpha), ws.g_a, ws.g_b)
    grads = zero_grads(params)
    _backward_branch(params, ws.xpad_a, ws.a1pad_a, ws.a2pad_a, ws.g_a, ws.dpad, ws.d1pad, grads)
    _backward_branch(params, ws.xpad_b, ws.a1pad_b, ws.a2pad_b, ws.g_b, ws.dpad, ws.d1pad, grads)
    return float(loss), grads


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 1e-3
    halve_every: int = 1000  # steps between halvings; 0 disables decay

    def at(self, step: int) -> float:
        if self.halve_every <= 0:
            return self.base_lr
        return self.base_lr * 0.5 ** (step // self.halve_every)


@dataclass
class TrainState:
    params: NetParams
    m: NetParams
    v: NetParams
    step: int = 0

    def __post_init__(self):
        for p, m, v in zip(self.params.tensors(), self.m.tensors(), self.v.tensors()):
            if p.shape != m.shape or p.shape != v.shape:
                raise ValueError("moment tensors must match parameter shapes")
        if self.step < 0:
            raise ValueError("step must be >= 0")


def init_train_state(params: NetParams) -> TrainState:
    return TrainState(params=params, m=zero_grads(params), v=zero_grads(params))


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(state: TrainState, grads: NetParams, schedule: LrSchedule) -> TrainState:
    """One bias-corrected Adam update; mutates and returns the state."""
    lr = schedule.at(state.step)
    t = state.step + 1
    correct1 = 1.0 - ADAM_BETA1**t
    correct2 = 1.0 - ADAM_BETA2**t
    for p, m, v, g in zip(
        state.params.tensors(), state.m.tensors(), state.v.tensors(), grads.tensors()
    ):
        g64 = g.astype(np.float64, copy=False)
        m64 = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g64
        v64 = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g64 * g64
        m[...] = m64.astype(m.dtype)
        v[...] = v64.astype(v.dtype)
        m_hat = m64 / correct1
        v_hat = v64 / correct2
        p -= (lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(p.dtype)
    state.step = t
    return state


# ---------------------------------------------------------------------------
# Parameter checkpoints (SFLK kind=2, tensors concatenated in PARAM_ORDER)
# ---------------------------------------------------------------------------


def save_params(path, params: NetParams) -> None:
    flat = np.concatenate([t.ravel().astype(np.float64) for t in params.tensors()])
    write_container(path, KIND_PARAMS, flat[np.newaxis, :], {"spacing_row": 0.0, "spacing_col": 0.0, "unit": 0})


def load_params(path, dtype=np.float32) -> NetParams:
    kind, matrix, _ = read_container(path)
    if kind != "params":
        raise ValueError(f"{path} holds a {kind}, expected network parameters")
    flat = matrix.ravel()
    # Invert total = 9C^2 + 12C + 1: C = (sqrt(total + 3) - 2) / 3.
    c = int(round((math.sqrt(flat.size + 3) - 2) / 3))
    if param_count(c) != flat.size:
        raise ValueError(f"{path} holds {flat.size} values, not a valid parameter count")
    shapes = [(c, 1, 3, 3), (c,), (c, c, 3, 3), (c,), (c,), (1,)]
    tensors = []
    pos = 0
    for shape in shapes:
        size = int(np.prod(shape))
        tensors.append(flat[pos : pos + size].reshape(shape).astype(dtype))
        pos += size
    return NetParams(*tensors)
