"""ConvNet-LSTM policy/value network with hand-written forward and backward
passes.

Trunk: 8x8/stride-4 conv (16 ch) -> ReLU -> 4x4/stride-2 conv (32 ch) -> ReLU
-> FC 256 -> ReLU -> LSTM 256, with a 6-way softmax policy head and a scalar
value head on the LSTM output. Convolutions use valid padding; gradients are
accumulated over a rollout window by backprop through time, treating the
window's initial recurrent state as constant.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .world import Action


class NumericFault(ArithmeticError):
    """A non-finite value appeared; carries the offending layer name."""

    def __init__(self, layer: str):
        super().__init__(f"non-finite values in {layer}")
        self.layer = layer


@dataclass(frozen=True)
class NetConfig:
    frame_hw: int = 84
    in_channels: int = 3
    conv1_kernel: int = 8
    conv1_stride: int = 4
    conv1_channels: int = 16
    conv2_kernel: int = 4
    conv2_stride: int = 2
    conv2_channels: int = 32
    fc_units: int = 256
    lstm_units: int = 256
    num_actions: int = 6

    @property
    def conv1_hw(self) -> int:
        return (self.frame_hw - self.conv1_kernel) // self.conv1_stride + 1

    @property
    def conv2_hw(self) -> int:
        return (self.conv1_hw - self.conv2_kernel) // self.conv2_stride + 1

    @property
    def flat_units(self) -> int:
        return self.conv2_hw * self.conv2_hw * self.conv2_channels

    @classmethod
    def reduced(cls) -> "NetConfig":
        """Small net for gradient checks: 12x12 input, 2/4 conv channels,
        8-unit FC and LSTM."""
        return cls(
            frame_hw=12,
            in_channels=3,
            conv1_kernel=4,
            conv1_stride=2,
            conv1_channels=2,
            conv2_kernel=3,
            conv2_stride=2,
            conv2_channels=4,
            fc_units=8,
            lstm_units=8,
        )

    def fingerprint(self) -> tuple[int, ...]:
        return (
            self.frame_hw,
            self.in_channels,
            self.conv1_kernel,
            self.conv1_stride,
            self.conv1_channels,
            self.conv2_kernel,
            self.conv2_stride,
            self.conv2_channels,
            self.fc_units,
            self.lstm_units,
            self.num_actions,
        )


PARAM_NAMES = (
    "conv1_w",
    "conv1_b",
    "conv2_w",
    "conv2_b",
    "fc_w",
    "fc_b",
    "lstm_wx",
    "lstm_wh",
    "lstm_b",
    "policy_w",
    "policy_b",
    "value_w",
    "value_b",
)


@dataclass
class NetParams:
    """All network weights. Conv kernels are stored (kh, kw, cin, cout)."""

    config: NetConfig
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray
    lstm_wx: np.ndarray
    lstm_wh: np.ndarray
    lstm_b: np.ndarray
    policy_w: np.ndarray
    policy_b: np.ndarray
    value_w: np.ndarray
    value_b: np.ndarray

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in PARAM_NAMES:
            yield name, getattr(self, name)

    def copy(self) -> "NetParams":
        return NetParams(self.config, *(arr.copy() for _, arr in self.items()))

    @property
    def dtype(self):
        return self.conv1_w.dtype

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.items())


@dataclass
class RecurrentState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, config: NetConfig, dtype=np.float32) -> "RecurrentState":
        return cls(np.zeros(config.lstm_units, dtype=dtype), np.zeros(config.lstm_units, dtype=dtype))

    def copy(self) -> "RecurrentState":
        return RecurrentState(self.h.copy(), self.c.copy())


@dataclass(frozen=True)
class PolicyOut:
    probs: np.ndarray
    logits: np.ndarray
    value: float


@dataclass
class Rollout:
    """Up-to-T-step window of one episode: frames, agent-view actions,
    rewards, and the values recorded while acting."""

    frames: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    initial_recurrent: RecurrentState
    bootstrap_value: float
    terminal: bool

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.actions)
        if not (len(self.frames) == len(self.rewards) == len(self.values) == n) or n < 1:
            raise ValueError("rollout lists must be non-empty and aligned")
        if self.terminal and self.bootstrap_value != 0.0:
            raise ValueError("terminal rollouts must carry a zero bootstrap value")


def init_params(
    seed: int | np.random.Generator | None,
    config: NetConfig = NetConfig(),
    scheme: str = "uniform-fanin",
    dtype=np.float32,
) -> NetParams:
    """Uniform fan-in-scaled weights, zero biases, LSTM forget-gate bias 1."""
    if scheme != "uniform-fanin":
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    c = config

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    k1, k2 = c.conv1_kernel, c.conv2_kernel
    lstm_b = np.zeros(4 * c.lstm_units, dtype=dtype)
    lstm_b[c.lstm_units : 2 * c.lstm_units] = 1.0  # forget gate
    return NetParams(
        config=c,
        conv1_w=uniform((k1, k1, c.in_channels, c.conv1_channels), k1 * k1 * c.in_channels),
        conv1_b=np.zeros(c.conv1_channels, dtype=dtype),
        conv2_w=uniform((k2, k2, c.conv1_channels, c.conv2_channels), k2 * k2 * c.conv1_channels),
        conv2_b=np.zeros(c.conv2_channels, dtype=dtype),
        fc_w=uniform((c.flat_units, c.fc_units), c.flat_units),
        fc_b=np.zeros(c.fc_units, dtype=dtype),
        lstm_wx=uniform((c.fc_units, 4 * c.lstm_units), c.fc_units),
        lstm_wh=uniform((c.lstm_units, 4 * c.lstm_units), c.lstm_units),
        lstm_b=lstm_b,
        policy_w=uniform((c.lstm_units, c.num_actions), c.lstm_units),
        policy_b=np.zeros(c.num_actions, dtype=dtype),
        value_w=uniform((c.lstm_units, 1), c.lstm_units),
        value_b=np.zeros(1, dtype=dtype),
    )


def zero_grads(params: NetParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _im2col(x: np.ndarray, k: int, s: int) -> np.ndarray:
    """(T, H, W, C) -> (T, OH*OW, k*k*C), window layout (kh, kw, c)."""
    v = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    v = v[:, ::s, ::s]  # (T, OH, OW, C, kh, kw)
    v = v.transpose(0, 1, 2, 4, 5, 3)
    t, oh, ow = v.shape[:3]
    return np.ascontiguousarray(v).reshape(t, oh * ow, k * k * x.shape[3])


def _col2im(dcols: np.ndarray, x_shape: tuple, k: int, s: int) -> np.ndarray:
    """Scatter-add column gradients back onto the input image stack."""
    t, h, w, c = x_shape
    oh = (h - k) // s + 1
    ow = (w - k) // s + 1
    d6 = dcols.reshape(t, oh, ow, k, k, c)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for kh in range(k):
        for kw in range(k):
            dx[:, kh : kh + oh * s : s, kw : kw + ow * s : s, :] += d6[:, :, :, kh, kw, :]
    return dx


def _forward_sequence(params: NetParams, frames: np.ndarray, h0: np.ndarray, c0: np.ndarray) -> dict:
    """Run the whole trunk over a (T, H, W, C) frame stack, keeping the
    activations needed for backprop. Conv/FC layers are batched over time;
    the LSTM runs sequentially."""
    cfg = params.config
    dt = params.dtype
    x = np.ascontiguousarray(frames, dtype=dt)
    if x.ndim != 4 or x.shape[1:] != (cfg.frame_hw, cfg.frame_hw, cfg.in_channels):
        raise ValueError(f"expected frames (T, {cfg.frame_hw}, {cfg.frame_hw}, {cfg.in_channels}), got {x.shape}")
    t = x.shape[0]
    k1, s1 = cfg.conv1_kernel, cfg.conv1_stride
    k2, s2 = cfg.conv2_kernel, cfg.conv2_stride

    cols1 = _im2col(x, k1, s1)
    a1 = np.maximum(cols1 @ params.conv1_w.reshape(-1, cfg.conv1_channels) + params.conv1_b, 0)
    a1_img = a1.reshape(t, cfg.conv1_hw, cfg.conv1_hw, cfg.conv1_channels)

    cols2 = _im2col(a1_img, k2, s2)
    a2 = np.maximum(cols2 @ params.conv2_w.reshape(-1, cfg.conv2_channels) + params.conv2_b, 0)
    flat = a2.reshape(t, cfg.flat_units)

    afc = np.maximum(flat @ params.fc_w + params.fc_b, 0)

    lu = cfg.lstm_units
    h = np.asarray(h0, dtype=dt)
    c = np.asarray(c0, dtype=dt)
    h_prev = np.empty((t, lu), dtype=dt)
    c_prev = np.empty((t, lu), dtype=dt)
    gi = np.empty((t, lu), dtype=dt)
    gf = np.empty((t, lu), dtype=dt)
    gg = np.empty((t, lu), dtype=dt)
    go = np.empty((t, lu), dtype=dt)
    c_seq = np.empty((t, lu), dtype=dt)
    tc_seq = np.empty((t, lu), dtype=dt)
    h_seq = np.empty((t, lu), dtype=dt)
    for i in range(t):
        h_prev[i] = h
        c_prev[i] = c
        gates = afc[i] @ params.lstm_wx + h @ params.lstm_wh + params.lstm_b
        gi[i] = _sigmoid(gates[:lu])
        gf[i] = _sigmoid(gates[lu : 2 * lu])
        gg[i] = np.tanh(gates[2 * lu : 3 * lu])
        go[i] = _sigmoid(gates[3 * lu :])
        c = gf[i] * c + gi[i] * gg[i]
        tc = np.tanh(c)
        h = go[i] * tc
        c_seq[i] = c
        tc_seq[i] = tc
        h_seq[i] = h

    logits = h_seq @ params.policy_w + params.policy_b
    values = (h_seq @ params.value_w).ravel() + params.value_b[0]
    return {
        "frames_shape": x.shape,
        "x": x,
        "cols1": cols1,
        "a1": a1,
        "cols2": cols2,
        "a2": a2,
        "flat": flat,
        "afc": afc,
        "h_prev": h_prev,
        "c_prev": c_prev,
        "gi": gi,
        "gf": gf,
        "gg": gg,
        "go": go,
        "c_seq": c_seq,
        "tc_seq": tc_seq,
        "h_seq": h_seq,
        "logits": logits,
        "values": values,
    }


def _first_bad_layer(cache: dict) -> str | None:
    order = ("a1", "a2", "afc", "h_seq", "logits", "values")
    names = {"a1": "conv1", "a2": "conv2", "afc": "fc", "h_seq": "lstm", "logits": "policy head", "values": "value head"}
    for key in order:
        if not np.isfinite(cache[key]).all():
            return names[key]
    return None


def _backward_sequence(
    params: NetParams,
    cache: dict,
    dlogits: np.ndarray,
    dvalues: np.ndarray,
    want_input_grad: bool = False,
) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
    cfg = params.config
    dt = params.dtype
    dlogits = np.asarray(dlogits, dtype=dt)
    dvalues = np.asarray(dvalues, dtype=dt)
    t = dlogits.shape[0]
    lu = cfg.lstm_units
    g: dict[str, np.ndarray] = {}

    h_seq = cache["h_seq"]
    g["policy_w"] = h_seq.T @ dlogits
    g["policy_b"] = dlogits.sum(axis=0)
    g["value_w"] = (h_seq.T @ dvalues)[:, None]
    g["value_b"] = np.array([dvalues.sum()], dtype=dt)

    dh_seq = dlogits @ params.policy_w.T + dvalues[:, None] * params.value_w[:, 0][None, :]

    dgates_seq = np.empty((t, 4 * lu), dtype=dt)
    dh_next = np.zeros(lu, dtype=dt)
    dc_next = np.zeros(lu, dtype=dt)
    gi, gf, gg, go = cache["gi"], cache["gf"], cache["gg"], cache["go"]
    for i in range(t - 1, -1, -1):
        dh = dh_seq[i] + dh_next
        tc = cache["tc_seq"][i]
        dc = dc_next + dh * go[i] * (1.0 - tc * tc)
        d_go = dh * tc * go[i] * (1.0 - go[i])
        d_gi = dc * gg[i] * gi[i] * (1.0 - gi[i])
        d_gf = dc * cache["c_prev"][i] * gf[i] * (1.0 - gf[i])
        d_gg = dc * gi[i] * (1.0 - gg[i] * gg[i])
        dgates = np.concatenate([d_gi, d_gf, d_gg, d_go])
        dgates_seq[i] = dgates
        dh_next = dgates @ params.lstm_wh.T
        dc_next = dc * gf[i]

    g["lstm_wx"] = cache["afc"].T @ dgates_seq
    g["lstm_wh"] = cache["h_prev"].T @ dgates_seq
    g["lstm_b"] = dgates_seq.sum(axis=0)

    dafc = dgates_seq @ params.lstm_wx.T
    dzfc = dafc * (cache["afc"] > 0)
    g["fc_w"] = cache["flat"].T @ dzfc
    g["fc_b"] = dzfc.sum(axis=0)

    dflat = dzfc @ params.fc_w.T
    da2 = dflat.reshape(cache["a2"].shape) * (cache["a2"] > 0)
    c2 = cfg.conv2_channels
    g["conv2_w"] = (cache["cols2"].reshape(-1, cache["cols2"].shape[-1]).T @ da2.reshape(-1, c2)).reshape(
        params.conv2_w.shape
    )
    g["conv2_b"] = da2.reshape(-1, c2).sum(axis=0)

    dcols2 = da2 @ params.conv2_w.reshape(-1, c2).T
    a1_shape = (t, cfg.conv1_hw, cfg.conv1_hw, cfg.conv1_channels)
    da1 = _col2im(dcols2, a1_shape, cfg.conv2_kernel, cfg.conv2_stride)
    da1 = da1.reshape(cache["a1"].shape) * (cache["a1"] > 0)

    c1 = cfg.conv1_channels
    g["conv1_w"] = (cache["cols1"].reshape(-1, cache["cols1"].shape[-1]).T @ da1.reshape(-1, c1)).reshape(
        params.conv1_w.shape
    )
    g["conv1_b"] = da1.reshape(-1, c1).sum(axis=0)

    dframes = None
    if want_input_grad:
        dcols1 = da1 @ params.conv1_w.reshape(-1, c1).T
        dframes = _col2im(dcols1, cache["frames_shape"], cfg.conv1_kernel, cfg.conv1_stride)
    return g, dframes


def forward(params: NetParams, frame: np.ndarray, rstate: RecurrentState) -> tuple[PolicyOut, RecurrentState]:
    """Single-frame forward pass; returns the policy/value outputs and the
    updated recurrent state without mutating the inputs."""
    cache = _forward_sequence(params, np.asarray(frame)[None], rstate.h, rstate.c)
    logits = cache["logits"][0].astype(np.float64)
    value = float(cache["values"][0])
    new_state = RecurrentState(cache["h_seq"][0].copy(), cache["c_seq"][0].copy())
    if not (np.isfinite(logits).all() and math.isfinite(value) and np.isfinite(new_state.h).all()):
        raise NumericFault(_first_bad_layer(cache) or "output")
    return PolicyOut(probs=_softmax(logits), logits=logits, value=value), new_state


def sample_action(probs: np.ndarray, rng: int | np.random.Generator | None) -> Action:
    """Inverse-CDF categorical draw over the fixed action order."""
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (len(Action),) or (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("probs must be a 6-way distribution summing to 1")
    generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    u = generator.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return Action(min(idx, len(Action) - 1))


def entropy(probs: np.ndarray) -> float:
    """Shannon entropy in nats with the 0*log(0) = 0 convention."""
    p = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.maximum(p, 1e-12))
    return float(-(p * logp)[p > 0].sum())


def loss_value(
    params: NetParams,
    rollout: Rollout,
    returns: np.ndarray,
    beta: float,
    advantages: np.ndarray | None = None,
) -> float:
    """Scalar training loss for one rollout window.

    The policy term weights log-probs by `advantages` (a constant vector; by
    default the advantages at the current parameters). This is the function
    the analytic gradients differentiate, with advantages held fixed.
    """
    cache = _forward_sequence(params, rollout.frames, rollout.initial_recurrent.h, rollout.initial_recurrent.c)
    logits = cache["logits"].astype(np.float64)
    values = cache["values"].astype(np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    probs = _softmax(logits)
    logp = np.log(np.maximum(probs, 1e-12))
    if advantages is None:
        advantages = returns - values
    acts = rollout.actions
    policy_loss = float(-(advantages * logp[np.arange(len(acts)), acts]).sum())
    value_loss = float(0.5 * ((returns - values) ** 2).sum())
    ent = -(probs * logp).sum(axis=1)
    return policy_loss + value_loss - beta * float(ent.sum())


def loss_and_grads(
    params: NetParams,
    rollout: Rollout,
    returns: np.ndarray,
    beta: float,
) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """Gradients of the combined actor-critic loss over one rollout window.

    The advantage (returns - values) multiplies the policy log-prob gradient
    as a constant; the value head is regressed onto the returns; the entropy
    bonus is weighted by beta. Returned gradients are for gradient descent.
    """
    returns = np.asarray(returns, dtype=np.float64)
    if returns.shape != rollout.actions.shape:
        raise ValueError("returns must align with the rollout")
    cache = _forward_sequence(params, rollout.frames, rollout.initial_recurrent.h, rollout.initial_recurrent.c)
    bad = _first_bad_layer(cache)
    if bad is not None:
        raise NumericFault(bad)

    t = len(rollout.actions)
    logits = cache["logits"].astype(np.float64)
    values = cache["values"].astype(np.float64)
    probs = _softmax(logits)
    logp = np.log(np.maximum(probs, 1e-12))
    ent = -(probs * logp).sum(axis=1)
    adv = returns - values

    one_hot = np.zeros_like(probs)
    one_hot[np.arange(t), rollout.actions] = 1.0
    dlogits = -adv[:, None] * (one_hot - probs)
    dlogits += beta * probs * (logp + ent[:, None])
    dvalues = values - returns

    grads, _ = _backward_sequence(params, cache, dlogits, dvalues)
    sq = 0.0
    for name, arr in grads.items():
        if not np.isfinite(arr).all():
            raise NumericFault(f"gradient of {name}")
        sq += float((arr.astype(np.float64) ** 2).sum())

    diagnostics = {
        "policy_loss": float(-(adv * logp[np.arange(t), rollout.actions]).sum()),
        "value_loss": float(0.5 * (adv**2).sum()),
        "entropy": float(ent.mean()),
        "grad_norm": math.sqrt(sq),
    }
    return grads, diagnostics


def logit_input_gradient(
    params: NetParams, frame: np.ndarray, rstate: RecurrentState, action_index: int
) -> np.ndarray:
    """Gradient of one action's logit with respect to the input frame."""
    cache = _forward_sequence(params, np.asarray(frame)[None], rstate.h, rstate.c)
    dlogits = np.zeros((1, params.config.num_actions), dtype=params.dtype)
    dlogits[0, action_index] = 1.0
    dvalues = np.zeros(1, dtype=params.dtype)
    _, dframes = _backward_sequence(params, cache, dlogits, dvalues, want_input_grad=True)
    return dframes[0]


# -- checkpoint format: magic, version, architecture fingerprint, then raw
#    little-endian float32 tensors in declaration order -----------------------

CHECKPOINT_MAGIC = b"ATGNET01"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: NetParams) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for v in params.config.fingerprint():
            f.write(struct.pack("<I", v))
        for _, arr in params.items():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, expected_config: NetConfig | None = None) -> NetParams:
    with open(path, "rb") as f:
        blob = f.read()
    head = len(CHECKPOINT_MAGIC)
    if blob[:head] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a network checkpoint")
    (version,) = struct.unpack_from("<I", blob, head)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = head + 4
    fields = struct.unpack_from("<11I", blob, offset)
    offset += 44
    config = NetConfig(*fields)
    if expected_config is not None and config != expected_config:
        raise CheckpointError(f"{path}: checkpoint architecture {fields} does not match the expected network")

    template = init_params(0, config, dtype=np.float32)
    arrays = []
    for name, arr in template.items():
        count = arr.size
        try:
            data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(arr.shape)
        except ValueError:
            raise CheckpointError(f"{path}: truncated tensor {name}") from None
        arrays.append(data.copy())
        offset += 4 * count
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing or missing tensor bytes")
    return NetParams(config, *arrays)
