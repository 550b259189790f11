"""Finite-difference checks for the layer library and the PPO loss (float64)."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from hideseek import nn
from hideseek.ppo import Hyperparams, ppo_loss

from oracles import central_difference, relative_error

EPS = 1e-3
REL_TOL = 1e-4
FLOOR = 1e-8


def _sample_indices(rng, shape, k):
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(k, size), replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def check_layer(layer, x, params, rng, k=12):
    """Worst relative error over sampled input and parameter coordinates."""
    y, cache = layer.forward(params, x)
    r = rng.standard_normal(y.shape)
    grads = OrderedDict((n, np.zeros_like(p)) for n, p in params.items())
    dx = layer.backward(params, cache, r, grads)

    def loss():
        return float(np.sum(layer.forward(params, x)[0] * r))

    worst = 0.0
    for idx in _sample_indices(rng, x.shape, k):
        worst = max(worst, relative_error(dx[idx], central_difference(loss, x, idx, EPS), FLOOR))
    for name, p in params.items():
        for idx in _sample_indices(rng, p.shape, k):
            fd = central_difference(loss, p, idx, EPS)
            worst = max(worst, relative_error(grads[name][idx], fd, FLOOR))
    return worst


def layer_configs():
    """(label, factory) pairs; the factory takes an rng and returns (layer, x, params)."""

    def conv(in_ch, out_ch, kernel, stride, size):
        def make(rng):
            layer = nn.Conv2d("c", in_ch, out_ch, kernel, stride)
            params = OrderedDict(
                (n, rng.standard_normal(s) * 0.3) for n, s in layer.param_shapes().items()
            )
            return layer, rng.standard_normal((2, in_ch, size, size)), params
        return make

    def linear(i, o):
        def make(rng):
            layer = nn.Linear("l", i, o)
            params = OrderedDict((n, rng.standard_normal(s) * 0.3) for n, s in layer.param_shapes().items())
            return layer, rng.standard_normal((3, i)), params
        return make

    def leaky(rng):
        x = rng.standard_normal((4, 50))
        x = np.where(np.abs(x) < 0.05, 0.5, x)  # keep clear of the kink
        return nn.LeakyReLU("a"), x, OrderedDict()

    def flatten(rng):
        return nn.Flatten(), rng.standard_normal((2, 3, 4, 5)), OrderedDict()

    return [
        ("conv1", conv(3, 32, 8, 4, 64)),
        ("conv2", conv(32, 64, 4, 2, 15)),
        ("conv3", conv(64, 64, 3, 1, 6)),
        ("linear", linear(1024, 512)),
        ("head", linear(512, 5)),
        ("leaky_relu", leaky),
        ("flatten", flatten),
    ]


def activation_pattern(model, params, obs):
    """Sign masks of every LeakyReLU in the network."""
    tape = model.forward(params, obs)._tape
    return [c for seq in tape for c in seq if isinstance(c, np.ndarray) and c.dtype == bool]


def _same_pattern(model, params, obs, base, p, idx, eps):
    orig = p[idx]
    try:
        for s in (1.0, -1.0):
            p[idx] = orig + s * eps
            if not all(np.array_equal(a, b) for a, b in zip(base, activation_pattern(model, params, obs))):
                return False
        return True
    finally:
        p[idx] = orig


def ppo_problem(rng, batch):
    model = nn.ActorCritic()
    params = model.init_params(rng, dtype=np.float64)
    # lift the actor head so the policy term is not negligible next to the value term
    params["actor_fc3.weight"] *= 50.0
    obs = rng.random((batch, 3, 64, 64))
    actions = rng.integers(0, 5, batch)
    cur = nn.log_softmax(model.forward(params, obs, record=False).logits)[np.arange(batch), actions]
    # ratios on both sides of the clip range, away from its edges
    old = cur + rng.choice([-0.5, -0.1, 0.1, 0.5], batch)
    adv = rng.standard_normal(batch)
    ret = rng.standard_normal(batch)
    return model, params, (obs, actions, old, adv, ret)


def check_end_to_end(rng, batch=1, k=3, eps=EPS, smooth_only=True, max_draws=60):
    """PPO loss through the whole actor-critic vs central differences on sampled weights.

    With ``smooth_only`` a coordinate is used only if the +-eps perturbation
    leaves every LeakyReLU sign unchanged, i.e. the loss is smooth on the
    stencil. Returns (worst relative error, coordinates checked, coordinates skipped).
    """
    model, params, (obs, actions, old, adv, ret) = ppo_problem(rng, batch)
    hp = Hyperparams()
    _, _, grads = ppo_loss(model, params, obs, actions, old, adv, ret, hp, with_grads=True)
    base = activation_pattern(model, params, obs) if smooth_only else None

    def loss():
        return ppo_loss(model, params, obs, actions, old, adv, ret, hp, with_grads=False)[0]

    worst, checked, skipped = 0.0, 0, 0
    for name, p in params.items():
        accepted = 0
        for idx in _sample_indices(rng, p.shape, max_draws):
            if accepted == k:
                break
            if smooth_only and not _same_pattern(model, params, obs, base, p, idx, eps):
                skipped += 1
                continue
            fd = central_difference(loss, p, idx, eps)
            worst = max(worst, relative_error(grads[name][idx], fd, FLOOR))
            accepted += 1
        if accepted < min(k, p.size):
            raise AssertionError(f"{name}: only {accepted} smooth coordinates found")
        checked += accepted
    return worst, checked, skipped
