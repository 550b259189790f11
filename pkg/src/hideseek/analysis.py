"""Evaluation, rollout logging, feature probes and behavioural statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import env as E
from .geometry import Pose
from .nn import ActorCritic, greedy_action, sample_action
from .ppo import episode_seed
from .render import render_view
from .replay import RolloutLog, make_record

N_STATES = 8
MIN_FREQUENCY_STEPS = 50_000


class AnalysisError(ValueError):
    pass


# --------------------------------------------------------------------------
# policies


class Policy:
    """Chooses hider actions. ``mode`` is "greedy", "sample" or "random"."""

    def __init__(self, model: Optional[ActorCritic], params, mode: str, rng: np.random.Generator):
        if mode not in ("greedy", "sample", "random"):
            raise ValueError(f"unknown policy mode {mode!r}")
        if mode != "random" and params is None:
            raise ValueError(f"{mode} policy needs parameters")
        self.model, self.params, self.mode, self.rng = model, params, mode, rng

    def act(self, obs: np.ndarray) -> int:
        if self.mode == "random":
            return int(self.rng.integers(E.N_ACTIONS))
        logits = self.model.forward(self.params, obs[None], record=False).logits[0]
        if self.mode == "greedy":
            return greedy_action(logits)
        return sample_action(logits, self.rng)[0]


def eval_seeds(seed: int, n: int) -> list[int]:
    return [episode_seed(seed, i) for i in range(n)]


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    episode_lengths: list
    caught: list
    policy: str = ""

    @property
    def n_episodes(self) -> int:
        return len(self.episode_lengths)

    @property
    def avg_living_steps(self) -> float:
        return float(np.mean(self.episode_lengths)) if self.episode_lengths else 0.0

    @property
    def success_rate(self) -> float:
        ok = sum(
            1 for n, c in zip(self.episode_lengths, self.caught)
            if n >= E.MAX_DECISION_STEPS and not c
        )
        return ok / self.n_episodes if self.n_episodes else 0.0

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "n_episodes": self.n_episodes,
            "avg_living_steps": self.avg_living_steps,
            "success_rate": self.success_rate,
            "episode_lengths": list(self.episode_lengths),
            "caught": list(self.caught),
        }


def run_episode(variant: E.VariantConfig, seed: int, policy: Policy,
                on_step=None) -> E.EnvState:
    state = E.reset(variant, seed)
    obs, _ = E.observe(state)
    while not state.done:
        a = policy.act(obs)
        res = E.step(state, a)
        if on_step is not None:
            on_step(state, a, res)
        obs = res.observation
    return state


def evaluate(model, params, variant: E.VariantConfig, n_episodes: int = 100, seed: int = 0,
             mode: str = "greedy") -> EvalReport:
    """Roll out ``n_episodes`` on a seed list that depends only on ``seed``."""
    rng = np.random.default_rng(seed)
    policy = Policy(model, params, mode, rng)
    lengths, caught = [], []
    for s in eval_seeds(seed, n_episodes):
        st = run_episode(variant, s, policy)
        lengths.append(st.decision_step)
        caught.append(st.caught)
    return EvalReport(lengths, caught, policy=mode)


def check_variant(manifest: dict, variant: E.VariantConfig) -> None:
    trained = manifest.get("variant")
    if trained is not None and trained != variant.to_dict():
        raise AnalysisError(
            f"checkpoint was trained on {trained.get('name')!r}, not {variant.name!r}"
        )


# --------------------------------------------------------------------------
# rollouts


def rollout(variant: E.VariantConfig, seed: int, n_steps: int, policy: Policy,
            header_extra: Optional[dict] = None) -> RolloutLog:
    """Log ``n_steps`` decision steps over consecutive episodes; the last may be cut short."""
    records: list = []
    episode_maps: dict = {}
    ep = 0
    while len(records) < n_steps:
        state = E.reset(variant, episode_seed(seed, ep))
        episode_maps[str(ep)] = state.world.to_dict()
        obs, _ = E.observe(state)
        while not state.done and len(records) < n_steps:
            a = policy.act(obs)
            res = E.step(state, a)
            records.append(make_record(ep, state, a, res))
            obs = res.observation
        ep += 1
    header = {
        "variant": variant.to_dict(),
        "seed": seed,
        "policy": policy.mode,
        "n_steps": n_steps,
    }
    if variant.stochastic_maps:
        header["map"] = None
        header["episode_maps"] = episode_maps
    else:
        header["map"] = episode_maps["0"]
    header.update(header_extra or {})
    return RolloutLog(header, records)


def observation_from_record(rec: dict, log: RolloutLog) -> np.ndarray:
    """Re-render the hider's view for a logged step (the render is a pure function of state)."""
    h = rec["hider"]
    pose = Pose(h["pos"][0], h["pos"][1], h["heading"])
    return render_view(pose, log.world_for(rec["episode"]), tuple(rec["seeker"]["pos"]))


def observations(log: RolloutLog, indices) -> np.ndarray:
    return np.stack([observation_from_record(log.records[i], log) for i in indices])


def extract_features(model: ActorCritic, params, obs: np.ndarray, batch: int = 256) -> np.ndarray:
    """FC1 post-activation features, (N, 512)."""
    chunks = [
        model.forward(params, obs[i : i + batch], record=False).features
        for i in range(0, len(obs), batch)
    ]
    return np.concatenate(chunks) if chunks else np.zeros((0, 512), dtype=np.float32)


# --------------------------------------------------------------------------
# probes

TASKS = {"seeker": "S", "selfvis": "H"}


@dataclass
class ProbeDataset:
    features: np.ndarray
    labels: np.ndarray
    task: str
    train_idx: np.ndarray
    test_idx: np.ndarray


@dataclass
class ProbeResult:
    weights: np.ndarray
    bias: float
    test_accuracy: float
    train_accuracy: float
    n_train: int
    n_test: int


def balanced_indices(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Subsample the majority class down to the minority size."""
    labels = np.asarray(labels, dtype=bool)
    pos = np.flatnonzero(labels)
    neg = np.flatnonzero(~labels)
    if len(pos) == 0 or len(neg) == 0:
        raise AnalysisError("probe labels contain a single class")
    k = min(len(pos), len(neg))
    pos = np.sort(rng.choice(pos, size=k, replace=False))
    neg = np.sort(rng.choice(neg, size=k, replace=False))
    return np.sort(np.concatenate([pos, neg]))


def make_probe_dataset(features, labels, task: str, seed: int = 0,
                       test_fraction: float = 0.2) -> ProbeDataset:
    """Class-balance, then split each class 80/20 into train and test."""
    features = np.asarray(features)
    labels = np.asarray(labels, dtype=bool)
    rng = np.random.default_rng(seed)
    keep = balanced_indices(labels, rng)
    train, test = [], []
    for cls in (True, False):
        idx = keep[labels[keep] == cls]
        idx = idx[rng.permutation(len(idx))]
        n_test = max(1, int(round(test_fraction * len(idx))))
        if n_test >= len(idx):
            raise AnalysisError("too few samples per class to split")
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return ProbeDataset(features, labels, task, np.sort(np.concatenate(train)),
                        np.sort(np.concatenate(test)))


def fit_logistic(x: np.ndarray, y: np.ndarray, l2: float = 1e-4, iterations: int = 500,
                 lr: float = 0.1) -> tuple[np.ndarray, float]:
    """Full-batch gradient descent on mean cross-entropy + (l2/2)|w|^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(iterations):
        z = x @ w + b
        p = 0.5 * (1.0 + np.tanh(0.5 * z))  # stable sigmoid
        err = p - y
        w -= lr * (x.T @ err / n + l2 * w)
        b -= lr * float(err.mean())
    return w, b


def fit_probe(ds: ProbeDataset, l2: float = 1e-4, iterations: int = 500,
              lr: float = 0.1) -> ProbeResult:
    """Logistic probe on standardised features; accuracy on the held-out split."""
    ytr = ds.labels[ds.train_idx]
    yte = ds.labels[ds.test_idx]
    for part, y in (("train", ytr), ("test", yte)):
        if y.all() or not y.any():
            raise AnalysisError(f"{part} split has a single class")
    xtr = ds.features[ds.train_idx].astype(np.float64)
    xte = ds.features[ds.test_idx].astype(np.float64)
    mu = xtr.mean(axis=0)
    sd = xtr.std(axis=0)
    sd[sd < 1e-12] = 1.0
    xtr = (xtr - mu) / sd
    xte = (xte - mu) / sd
    w, b = fit_logistic(xtr, ytr, l2, iterations, lr)
    acc_tr = float(np.mean((xtr @ w + b > 0) == ytr))
    acc_te = float(np.mean((xte @ w + b > 0) == yte))
    return ProbeResult(w, b, acc_te, acc_tr, len(ytr), len(yte))


def probe_labels(log: RolloutLog, indices, task: str) -> np.ndarray:
    key = TASKS.get(task, task)
    return np.array([log.records[i][key] for i in indices], dtype=bool)


# --------------------------------------------------------------------------
# visual states


def visual_indices(log: RolloutLog) -> np.ndarray:
    return np.array([E.state_index(r["S"], r["H"], r["O"]) for r in log.records], dtype=np.int64)


def raw_state_frequency(log: RolloutLog) -> np.ndarray:
    idx = visual_indices(log)
    if len(idx) == 0:
        raise AnalysisError("empty log")
    return np.bincount(idx, minlength=N_STATES) / len(idx)


def state_frequency(log: RolloutLog, baseline: RolloutLog,
                    min_steps: int = MIN_FREQUENCY_STEPS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(policy − baseline, policy raw, baseline raw) visiting frequencies of the 8 states."""
    for name, lg in (("policy", log), ("baseline", baseline)):
        if len(lg) < min_steps:
            raise AnalysisError(f"{name} log has {len(lg)} steps, need at least {min_steps}")
    p = raw_state_frequency(log)
    q = raw_state_frequency(baseline)
    return p - q, p, q


def transition_counts(log: RolloutLog) -> np.ndarray:
    counts = np.zeros((N_STATES, N_STATES), dtype=np.int64)
    for ep in log.episodes():
        idx = [E.state_index(r["S"], r["H"], r["O"]) for r in ep]
        if len(idx) > 1:
            np.add.at(counts, (idx[:-1], idx[1:]), 1)
    return counts


def transition_probabilities(log: RolloutLog) -> np.ndarray:
    """(8, 8) P(next=j | current=i, next≠i); NaN on the diagonal and for empty rows."""
    if len(log) < 2:
        raise AnalysisError("need at least two steps")
    counts = transition_counts(log).astype(np.float64)
    np.fill_diagonal(counts, 0.0)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(totals > 0, counts / totals, np.nan)
    np.fill_diagonal(probs, np.nan)
    return probs


def transition_rows(probs: np.ndarray) -> list[tuple[str, str, float]]:
    """The 56 ordered off-diagonal pairs, in state order."""
    return [
        (E.STATE_LABELS[i], E.STATE_LABELS[j], float(probs[i, j]))
        for i in range(N_STATES)
        for j in range(N_STATES)
        if i != j
    ]


# --------------------------------------------------------------------------
# distances


@dataclass
class DistanceSeries:
    per_episode: list = field(default_factory=list)
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def distance_series(log: RolloutLog) -> DistanceSeries:
    """Inter-agent distance per step; the mean at step t covers episodes still alive at t."""
    if len(log) == 0:
        raise AnalysisError("empty log")
    curves = []
    for ep in log.episodes():
        curves.append(np.array([
            math.hypot(r["hider"]["pos"][0] - r["seeker"]["pos"][0],
                       r["hider"]["pos"][1] - r["seeker"]["pos"][1])
            for r in ep
        ]))
    horizon = max(len(c) for c in curves)
    sums = np.zeros(horizon)
    counts = np.zeros(horizon, dtype=np.int64)
    for c in curves:
        sums[: len(c)] += c
        counts[: len(c)] += 1
    return DistanceSeries(curves, sums / counts, counts)


# --------------------------------------------------------------------------
# parabolic fit


@dataclass
class QuadFit:
    a: float
    b: float
    c: float
    residual: float

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.a * x * x + self.b * x + self.c


def quad_fit(x, y) -> QuadFit:
    """Least-squares y = a x^2 + b x + c via normal equations on centred x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 3 or len(x) != len(y):
        raise AnalysisError("need at least three (x, y) points")
    m = x.mean()
    u = x - m
    if np.all(u == 0.0):
        raise AnalysisError("all x values are equal")
    design = np.column_stack([u * u, u, np.ones_like(u)])
    try:
        a2, b2, c2 = np.linalg.solve(design.T @ design, design.T @ y)
    except np.linalg.LinAlgError:
        raise AnalysisError("degenerate design (fewer than three distinct x)") from None
    a = a2
    b = b2 - 2.0 * a2 * m
    c = a2 * m * m - b2 * m + c2
    fit = QuadFit(float(a), float(b), float(c), 0.0)
    fit.residual = float(np.linalg.norm(fit(x) - y))
    return fit
