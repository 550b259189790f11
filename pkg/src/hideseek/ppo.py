"""PPO for the hider: rollouts, GAE, clipped-surrogate updates with Adam, training loop."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import env as E
from .nn import ActorCritic, load_checkpoint, log_softmax, sample_action, save_checkpoint, split_params

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


_NON_NEGATIVE = {"learning_rate", "value_coef", "entropy_coef"}


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 3e-4
    buffer_size: int = 1000
    total_steps: int = 200_000
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 250
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 10

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name in _NON_NEGATIVE:
                if not v >= 0:
                    raise ValueError(f"{f.name} must be non-negative")
            elif not v > 0:
                raise ValueError(f"{f.name} must be positive")
        if self.buffer_size % self.minibatch_size:
            raise ValueError("minibatch_size must divide buffer_size")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def episode_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


# --------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    actions: np.ndarray
    logps: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    bootstrap_value: float
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class EpisodeStats:
    index: int
    seed: int
    length: int
    ret: float
    caught: bool


@dataclass
class Collector:
    """Keeps one environment running across rollout buffers."""

    variant: E.VariantConfig
    base_seed: int
    episode_index: int = 0
    state: Optional[E.EnvState] = None
    ep_return: float = 0.0
    obs: Optional[np.ndarray] = field(default=None, repr=False)

    def _new_episode(self):
        self.state = E.reset(self.variant, episode_seed(self.base_seed, self.episode_index))
        self.ep_return = 0.0
        self.obs, _ = E.observe(self.state)

    def collect(self, model: ActorCritic, params, n_steps: int,
                rng: np.random.Generator) -> tuple[RolloutBuffer, list[EpisodeStats]]:
        if self.state is None:
            self._new_episode()
        elif self.obs is None:
            self.obs, _ = E.observe(self.state)
        obs = np.empty((n_steps,) + model.obs_shape, dtype=np.float32)
        actions = np.empty(n_steps, dtype=np.int64)
        logps = np.empty(n_steps, dtype=np.float32)
        values = np.empty(n_steps, dtype=np.float32)
        rewards = np.empty(n_steps, dtype=np.float32)
        dones = np.empty(n_steps, dtype=bool)
        finished = []
        for t in range(n_steps):
            out = model.forward(params, self.obs[None], record=False)
            a, logp, _ = sample_action(out.logits[0], rng)
            obs[t] = self.obs
            actions[t], logps[t], values[t] = a, logp, out.value[0]
            res = E.step(self.state, a)
            rewards[t], dones[t] = res.reward, res.done
            self.ep_return += res.reward
            if res.done:
                finished.append(EpisodeStats(
                    self.episode_index, self.state.seed, self.state.decision_step,
                    self.ep_return, self.state.caught,
                ))
                self.episode_index += 1
                self._new_episode()
            else:
                self.obs = res.observation
        if dones[-1]:
            bootstrap = 0.0
        else:
            bootstrap = float(model.forward(params, self.obs[None], record=False).value[0])
        buf = RolloutBuffer(obs, actions, logps, values, rewards, dones, bootstrap)
        return buf, finished

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.to_dict(),
            "base_seed": self.base_seed,
            "episode_index": self.episode_index,
            "ep_return": self.ep_return,
            "state": None if self.state is None else self.state.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Collector":
        return cls(
            variant=E.VariantConfig.from_dict(d["variant"]),
            base_seed=int(d["base_seed"]),
            episode_index=int(d["episode_index"]),
            state=None if d["state"] is None else E.EnvState.from_dict(d["state"]),
            ep_return=float(d["ep_return"]),
        )


def collect(model, params, variant, hp: Hyperparams, rng, base_seed: int = 0):
    """Gather one fresh buffer of ``hp.buffer_size`` steps."""
    buf, _ = Collector(variant, base_seed).collect(model, params, hp.buffer_size, rng)
    return buf


def compute_gae(rewards, values, dones, bootstrap_value, gamma, lam, normalize=True):
    """Generalised advantage estimates and returns, computed in float64.

    Returns (advantages, returns); returns use the raw advantages, the first
    output is normalised to zero mean and unit variance when ``normalize``.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    nonterminal = 1.0 - np.asarray(dones, dtype=np.float64)
    n = len(r)
    adv = np.zeros(n)
    next_value = float(bootstrap_value)
    last = 0.0
    for t in range(n - 1, -1, -1):
        delta = r[t] + gamma * next_value * nonterminal[t] - v[t]
        last = delta + gamma * lam * nonterminal[t] * last
        adv[t] = last
        next_value = v[t]
    returns = adv + v
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


# --------------------------------------------------------------------------
# optimisation


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = OrderedDict((n, np.zeros_like(p)) for n, p in params.items())
        self.v = OrderedDict((n, np.zeros_like(p)) for n, p in params.items())
        self.t = 0

    def step(self, params, grads, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for n, p in params.items():
            g = grads[n]
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def clip_grad_norm(grads, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads.values():
            g *= g.dtype.type(scale)
    return total


def ppo_loss(model: ActorCritic, params, obs, actions, old_logps, advantages, returns,
             hp: Hyperparams, with_grads: bool = True):
    """Clipped-surrogate PPO loss; returns (loss, stats, grads or None)."""
    out = model.forward(params, obs, record=with_grads)
    logits = out.logits.astype(np.float64)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    b = len(actions)
    idx = np.arange(b)
    logp = logp_all[idx, actions]
    ratio = np.exp(logp - np.asarray(old_logps, dtype=np.float64))
    adv = np.asarray(advantages, dtype=np.float64)
    surr1 = ratio * adv
    clipped_ratio = np.clip(ratio, 1.0 - hp.clip_eps, 1.0 + hp.clip_eps)
    surr2 = clipped_ratio * adv
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    value = out.value.astype(np.float64)
    ret = np.asarray(returns, dtype=np.float64)
    value_loss = hp.value_coef * np.mean((value - ret) ** 2)
    ent = -(p * logp_all).sum(axis=1)
    loss = policy_loss + value_loss - hp.entropy_coef * ent.mean()
    if not math.isfinite(loss):
        raise FloatingPointError(
            f"non-finite PPO loss: policy={policy_loss} value={value_loss} entropy={ent.mean()}"
        )
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > hp.clip_eps))
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(ent.mean()),
        "clip_fraction": clip_frac,
    }
    if not with_grads:
        return float(loss), stats, None
    # the unclipped branch carries gradient wherever it is the minimum
    active = surr1 <= surr2
    d_logp = np.where(active, -surr1, 0.0) / b
    onehot = np.zeros_like(logits)
    onehot[idx, actions] = 1.0
    d_logits = d_logp[:, None] * (onehot - p)
    # d(-c * mean H)/dz = c/B * p * (log p + H)
    d_logits += hp.entropy_coef / b * p * (logp_all + ent[:, None])
    d_value = 2.0 * hp.value_coef * (value - ret) / b
    grads = model.backward(params, out, d_logits=d_logits, d_value=d_value)
    return float(loss), stats, grads


def ppo_update(model, params, buf: RolloutBuffer, hp: Hyperparams, adam: Adam,
               rng: np.random.Generator) -> dict:
    """Several epochs of shuffled minibatch updates; mutates ``params`` in place."""
    if buf.advantages is None:
        raise ValueError("compute advantages before updating")
    n = len(buf)
    sums: dict[str, float] = {}
    count = 0
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.minibatch_size):
            mb = order[start : start + hp.minibatch_size]
            _, stats, grads = ppo_loss(
                model, params, buf.obs[mb], buf.actions[mb], buf.logps[mb],
                buf.advantages[mb], buf.returns[mb], hp,
            )
            stats["grad_norm"] = clip_grad_norm(grads, hp.max_grad_norm)
            adam.step(params, grads, hp.learning_rate)
            for k, v in stats.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
    return {k: v / count for k, v in sums.items()}


# --------------------------------------------------------------------------
# training loop

CURVE_FIELDS = [
    "update", "step", "mean_episode_length", "mean_return", "episodes",
    "policy_loss", "value_loss", "entropy", "clip_fraction", "grad_norm",
]


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def checkpoint_arrays(params, adam: Adam) -> OrderedDict:
    arrays = OrderedDict(params)
    for n, a in adam.m.items():
        arrays[f"adam.m.{n}"] = a
    for n, a in adam.v.items():
        arrays[f"adam.v.{n}"] = a
    return arrays


def load_policy(path) -> tuple[ActorCritic, OrderedDict, dict]:
    """Load network parameters (and the manifest) from a checkpoint directory."""
    model = ActorCritic()
    arrays, manifest = load_checkpoint(path)
    params, _ = split_params(arrays, model)
    if manifest.get("n_params") not in (None, model.n_params()):
        raise ValueError("checkpoint parameter count does not match the architecture")
    return model, params, manifest


@dataclass
class TrainState:
    params: OrderedDict
    adam: Adam
    rng: np.random.Generator
    collector: Collector
    update: int = 0


def _save(path: Path, ts: TrainState, variant, hp, seed, model) -> Path:
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": "hider_policy",
        "variant": variant.to_dict(),
        "hyperparams": hp.to_dict(),
        "seed": seed,
        "update": ts.update,
        "training_step": ts.update * hp.buffer_size,
        "n_params": model.n_params(),
        "adam_t": ts.adam.t,
        "rng": ts.rng.bit_generator.state,
        "collector": ts.collector.to_dict(),
    }
    return save_checkpoint(path, checkpoint_arrays(ts.params, ts.adam), meta)


def _restore(path) -> tuple[TrainState, dict]:
    model = ActorCritic()
    arrays, manifest = load_checkpoint(path)
    params, extra = split_params(arrays, model)
    hp = manifest["hyperparams"]
    adam = Adam(params, hp["adam_beta1"], hp["adam_beta2"], hp["adam_eps"])
    for n in params:
        adam.m[n] = extra[f"adam.m.{n}"].copy()
        adam.v[n] = extra[f"adam.v.{n}"].copy()
    adam.t = int(manifest["adam_t"])
    rng = np.random.default_rng()
    rng.bit_generator.state = manifest["rng"]
    collector = Collector.from_dict(manifest["collector"])
    params = OrderedDict((n, p.copy()) for n, p in params.items())
    return TrainState(params, adam, rng, collector, int(manifest["update"])), manifest


def train(variant: E.VariantConfig, hp: Hyperparams, seed: int, out_dir,
          resume: Optional[str] = None, stop_after: Optional[int] = None) -> list[Path]:
    """Alternate collection and updates until ``hp.total_steps`` decision steps.

    Writes ``manifest.json``, ``curve.csv`` and ``episodes.jsonl`` to ``out_dir``,
    a checkpoint every ``hp.checkpoint_every`` updates under ``checkpoints/``, and
    the final one to ``final/``. ``stop_after`` ends the run early after that many
    updates (for resume testing).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = ActorCritic()
    n_updates = hp.total_steps // hp.buffer_size
    if resume is not None:
        ts, manifest = _restore(resume)
        if manifest["variant"] != variant.to_dict() or manifest["hyperparams"] != hp.to_dict():
            raise ValueError("resume checkpoint was trained with a different configuration")
        curve_rows = _read_rows(out / "curve.csv")[: ts.update]
        episode_lines = [
            ln for ln in _read_lines(out / "episodes.jsonl")
            if json.loads(ln)["update"] < ts.update
        ]
    else:
        rng = np.random.default_rng(seed)
        params = model.init_params(rng)
        ts = TrainState(params, Adam(params, hp.adam_beta1, hp.adam_beta2, hp.adam_eps), rng,
                        Collector(variant, seed))
        curve_rows, episode_lines = [], []

    run_manifest = {
        "format_version": FORMAT_VERSION,
        "command": "train",
        "variant": variant.to_dict(),
        "seed": seed,
        "hyperparams": hp.to_dict(),
        "n_updates": n_updates,
    }
    (out / "manifest.json").write_text(json.dumps(run_manifest, indent=1, sort_keys=True))

    saved = []
    last = n_updates if stop_after is None else min(n_updates, stop_after)
    while ts.update < last:
        buf, finished = ts.collector.collect(model, ts.params, hp.buffer_size, ts.rng)
        buf.advantages, buf.returns = compute_gae(
            buf.rewards, buf.values, buf.dones, buf.bootstrap_value, hp.gamma, hp.gae_lambda
        )
        stats = ppo_update(model, ts.params, buf, hp, ts.adam, ts.rng)
        ts.update += 1
        lengths = [e.length for e in finished]
        rets = [e.ret for e in finished]
        row = {
            "update": ts.update,
            "step": ts.update * hp.buffer_size,
            "mean_episode_length": float(np.mean(lengths)) if lengths else float("nan"),
            "mean_return": float(np.mean(rets)) if rets else float("nan"),
            "episodes": len(finished),
            **stats,
        }
        curve_rows.append([_fmt(row[k]) for k in CURVE_FIELDS])
        for e in finished:
            episode_lines.append(json.dumps({
                "update": ts.update - 1, "episode": e.index, "seed": e.seed,
                "length": e.length, "return": e.ret, "caught": e.caught,
            }, sort_keys=True))
        log.info("update %d/%d step %d len %.1f ret %.3f ent %.3f", ts.update, n_updates,
                 row["step"], row["mean_episode_length"], row["mean_return"], stats["entropy"])
        _write_curve(out / "curve.csv", curve_rows)
        (out / "episodes.jsonl").write_text("".join(ln + "\n" for ln in episode_lines))
        if ts.update % hp.checkpoint_every == 0:
            saved.append(_save(out / "checkpoints" / f"update-{ts.update:06d}", ts, variant, hp, seed, model))
    if ts.update == n_updates:
        saved.append(_save(out / "final", ts, variant, hp, seed, model))
    return saved


def _write_curve(path: Path, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_FIELDS)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _read_rows(path: Path) -> list:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[1:]


def _read_lines(path: Path) -> list:
    if not path.exists():
        return []
    return [ln for ln in path.read_text().splitlines() if ln]
