"""Small numpy network library with reverse-mode gradients and the actor-critic model.

Layers keep whatever they need from the forward pass in an explicit cache, and
``backward`` walks the recorded layers in reverse. Everything is dtype-agnostic,
so the same code runs in float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

import json
import math
import os
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAKY_SLOPE = 0.01


class NonFiniteError(FloatingPointError):
    pass


class NoRecordedPass(RuntimeError):
    pass


def _check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite values after {where}")
    return x


# --------------------------------------------------------------------------
# layers


class Layer:
    name: str = ""
    param_names: tuple[str, ...] = ()

    def forward(self, params, x):
        """Return (output, cache)."""
        raise NotImplementedError

    def backward(self, params, cache, grad_out, grads, need_input_grad=True):
        """Accumulate parameter gradients into ``grads``; return the input gradient."""
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, name, in_ch, out_ch, kernel, stride):
        self.name = name
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.param_names = (f"{name}.weight", f"{name}.bias")

    def param_shapes(self):
        return {
            self.param_names[0]: (self.out_ch, self.in_ch, self.kernel, self.kernel),
            self.param_names[1]: (self.out_ch,),
        }

    def out_size(self, n: int) -> int:
        return (n - self.kernel) // self.stride + 1

    def forward(self, params, x):
        w, b = params[self.param_names[0]], params[self.param_names[1]]
        bsz, c, h, wd = x.shape
        if c != self.in_ch:
            raise ValueError(f"{self.name}: expected {self.in_ch} channels, got {c}")
        k, s = self.kernel, self.stride
        ho, wo = self.out_size(h), self.out_size(wd)
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, c * k * k)
        out = cols @ w.reshape(self.out_ch, -1).T + b
        out = out.reshape(bsz, ho, wo, self.out_ch).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (cols, x.shape)

    def backward(self, params, cache, grad_out, grads, need_input_grad=True):
        w = params[self.param_names[0]]
        cols, xshape = cache
        bsz, c, h, wd = xshape
        k, s = self.kernel, self.stride
        ho, wo = grad_out.shape[2], grad_out.shape[3]
        g = grad_out.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
        grads[self.param_names[0]] += (g.T @ cols).reshape(w.shape)
        grads[self.param_names[1]] += g.sum(axis=0)
        if not need_input_grad:
            return None
        dcols = (g @ w.reshape(self.out_ch, -1)).reshape(bsz, ho, wo, c, k, k)
        dx = np.zeros(xshape, dtype=grad_out.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx


class Linear(Layer):
    def __init__(self, name, in_features, out_features):
        self.name = name
        self.in_features, self.out_features = in_features, out_features
        self.param_names = (f"{name}.weight", f"{name}.bias")

    def param_shapes(self):
        return {
            self.param_names[0]: (self.out_features, self.in_features),
            self.param_names[1]: (self.out_features,),
        }

    def forward(self, params, x):
        if x.shape[-1] != self.in_features:
            raise ValueError(f"{self.name}: expected {self.in_features} features, got {x.shape[-1]}")
        w, b = params[self.param_names[0]], params[self.param_names[1]]
        return x @ w.T + b, x

    def backward(self, params, cache, grad_out, grads, need_input_grad=True):
        x = cache
        grads[self.param_names[0]] += grad_out.T @ x
        grads[self.param_names[1]] += grad_out.sum(axis=0)
        if not need_input_grad:
            return None
        return grad_out @ params[self.param_names[0]]


class LeakyReLU(Layer):
    def __init__(self, name, slope=LEAKY_SLOPE):
        self.name, self.slope = name, slope

    def forward(self, params, x):
        pos = x >= 0
        return np.where(pos, x, x * x.dtype.type(self.slope)), pos

    def backward(self, params, cache, grad_out, grads, need_input_grad=True):
        return np.where(cache, grad_out, grad_out * grad_out.dtype.type(self.slope))


class Flatten(Layer):
    def __init__(self, name="flatten"):
        self.name = name

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, grad_out, grads, need_input_grad=True):
        return grad_out.reshape(cache)


def leaky_relu(x, slope=LEAKY_SLOPE):
    """Returns (y, dy/dx); the derivative at exactly 0 is 1."""
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    return np.where(pos, x, slope * x), np.where(pos, 1.0, slope)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def param_names(self):
        return [n for layer in self.layers for n in layer.param_names]

    def forward(self, params, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(params, x)
            _check_finite(x, layer.name)
            caches.append(cache)
        return x, caches

    def backward(self, params, caches, grad_out, grads, need_input_grad=True):
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            need = need_input_grad or i > 0
            g = self.layers[i].backward(params, caches[i], g, grads, need_input_grad=need)
        return g


# --------------------------------------------------------------------------
# actor-critic


@dataclass
class PolicyOutput:
    logits: np.ndarray  # (B, 5)
    value: np.ndarray  # (B,)
    features: np.ndarray  # (B, 512) FC1 post-activation
    _tape: Optional[tuple] = None


class ActorCritic:
    """Conv(32,8,4) -> Conv(64,4,2) -> Conv(64,3,1) -> FC 512, then actor and critic heads.

    Hidden layers use LeakyReLU; the last layer of each head is linear.
    """

    n_actions = 5
    obs_shape = (3, 64, 64)

    def __init__(self):
        self.backbone = Sequential([
            Conv2d("conv1", 3, 32, 8, 4), LeakyReLU("act1"),
            Conv2d("conv2", 32, 64, 4, 2), LeakyReLU("act2"),
            Conv2d("conv3", 64, 64, 3, 1), LeakyReLU("act3"),
            Flatten(),
            Linear("fc1", 64 * 4 * 4, 512), LeakyReLU("act_fc1"),
        ])
        self.actor = Sequential([
            Linear("actor_fc2", 512, 512), LeakyReLU("act_actor"),
            Linear("actor_fc3", 512, self.n_actions),
        ])
        self.critic = Sequential([
            Linear("critic_fc2", 512, 512), LeakyReLU("act_critic"),
            Linear("critic_fc3", 512, 1),
        ])

    def param_shapes(self) -> "OrderedDict[str, tuple]":
        shapes = OrderedDict()
        for seq in (self.backbone, self.actor, self.critic):
            for layer in seq.layers:
                if hasattr(layer, "param_shapes"):
                    shapes.update(layer.param_shapes())
        return shapes

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    def init_params(self, rng: np.random.Generator, dtype=np.float32):
        """Orthogonal weights (gain sqrt(2) hidden, 0.01 actor head, 1 critic head), zero biases."""
        gains = {"actor_fc3": 0.01, "critic_fc3": 1.0}
        params = OrderedDict()
        for name, shape in self.param_shapes().items():
            layer, kind = name.rsplit(".", 1)
            if kind == "bias":
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                w = orthogonal(rng, shape, gains.get(layer, math.sqrt(2.0)))
                # one fixed memory layout, so BLAS rounding matches reloaded checkpoints
                params[name] = np.ascontiguousarray(w, dtype=dtype)
        return params

    def zero_params(self, dtype=np.float32):
        return OrderedDict((n, np.zeros(s, dtype=dtype)) for n, s in self.param_shapes().items())

    def check_params(self, params) -> None:
        shapes = self.param_shapes()
        if list(params) != list(shapes):
            raise ValueError("parameter names do not match the architecture")
        for n, s in shapes.items():
            if tuple(params[n].shape) != tuple(s):
                raise ValueError(f"{n}: shape {params[n].shape} != {s}")

    def forward(self, params, obs, record: bool = True) -> PolicyOutput:
        obs = np.asarray(obs)
        if obs.ndim != 4 or obs.shape[1:] != self.obs_shape:
            raise ValueError(f"observations must be (B, 3, 64, 64), got {obs.shape}")
        dtype = params["conv1.weight"].dtype
        x = obs.astype(dtype, copy=False)
        feats, c_bb = self.backbone.forward(params, x)
        logits, c_a = self.actor.forward(params, feats)
        value, c_c = self.critic.forward(params, feats)
        tape = (c_bb, c_a, c_c) if record else None
        return PolicyOutput(logits, value[:, 0], feats, tape)

    def backward(self, params, out: PolicyOutput, d_logits=None, d_value=None,
                 d_features=None):
        """Gradients of a scalar loss given its partials w.r.t. the network outputs."""
        if out._tape is None:
            raise NoRecordedPass("backward needs a forward pass run with record=True")
        c_bb, c_a, c_c = out._tape
        grads = OrderedDict((n, np.zeros_like(p)) for n, p in params.items())
        dtype = out.features.dtype
        g_feat = np.zeros_like(out.features) if d_features is None else np.asarray(d_features, dtype)
        if d_logits is not None:
            g_feat = g_feat + self.actor.backward(params, c_a, np.asarray(d_logits, dtype), grads)
        if d_value is not None:
            dv = np.asarray(d_value, dtype).reshape(-1, 1)
            g_feat = g_feat + self.critic.backward(params, c_c, dv, grads)
        self.backbone.backward(params, c_bb, g_feat, grads, need_input_grad=False)
        return grads


def orthogonal(rng: np.random.Generator, shape, gain: float) -> np.ndarray:
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return (gain * q[:rows, :cols]).reshape(shape)


# --------------------------------------------------------------------------
# action distribution


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def entropy(logits: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits)
    p = np.exp(logp)
    return -(p * logp).sum(axis=-1)


def sample_action(logits, rng: np.random.Generator) -> tuple[int, float, float]:
    """Inverse-CDF draw from softmax(logits): (action, log-prob, entropy)."""
    logp = log_softmax(np.asarray(logits).reshape(-1))
    p = np.exp(logp)
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    a = min(int(np.searchsorted(cdf, u, side="right")), len(p) - 1)
    return a, float(logp[a]), float(-(p * logp).sum())


def greedy_action(logits) -> int:
    return int(np.argmax(np.asarray(logits).reshape(-1)))


# --------------------------------------------------------------------------
# checkpoints


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_checkpoint(path, arrays: "OrderedDict[str, np.ndarray]", meta: dict) -> Path:
    """Write ``manifest.json`` plus a little-endian float32 ``weights.bin`` under ``path``.

    ``arrays`` holds the network parameters and, optionally, optimizer moments
    (any float32 arrays, stored in order).
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = dict(meta)
    manifest["tensors"] = entries
    manifest["total_bytes"] = offset
    _atomic_write(path / "weights.bin", b"".join(chunks))
    _atomic_write(path / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True).encode())
    return path


def load_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    blob = (path / "weights.bin").read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise ValueError(f"{path}: weight blob is {len(blob)} bytes, manifest says {manifest['total_bytes']}")
    arrays = OrderedDict()
    for e in manifest["tensors"]:
        a = np.frombuffer(blob, dtype="<f4", count=e["nbytes"] // 4, offset=e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.float32)
    return arrays, manifest


def split_params(arrays, model: ActorCritic):
    """Separate network parameters from any extra stored arrays."""
    names = list(model.param_shapes())
    params = OrderedDict((n, arrays[n]) for n in names)
    model.check_params(params)
    extra = OrderedDict((n, a) for n, a in arrays.items() if n not in params)
    return params, extra
