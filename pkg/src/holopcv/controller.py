"""Advantage actor-critic controller that picks a catalog model per frame.

State (8 features): the last five throughput measurements / 200 Mbps, device
level scaled to [0, 1], target FPS / 30 and the previous action scaled to
[0, 1]. Reward: per-frame QoE.
"""

from __future__ import annotations

import csv
import logging
import threading
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .codec.serialize import pack, unpack
from .metrics import csv_value
from .netsim import (DEFAULT_PROFILES, BandwidthTrace, DeviceProfile,
                     SessionContext, simulate_session, synth_trace)

log = logging.getLogger(__name__)

STATE_DIM = 8
HISTORY = 5
BW_NORM = 200.0
FPS_NORM = 30.0
FEATURE_CAP = 1.5


class ControllerDivergence(RuntimeError):
    pass


def observe(ctx: SessionContext) -> np.ndarray:
    hist = list(ctx.throughput_mbps[-HISTORY:])
    if not hist:
        hist = [ctx.warmup_mbps]
    hist = [hist[0]] * (HISTORY - len(hist)) + hist
    last = ctx.last_action / (ctx.n_actions - 1) if ctx.n_actions > 1 else 0.0
    feats = [b / BW_NORM for b in hist] + [(ctx.device_level - 1) / 3.0,
                                          ctx.target_fps / FPS_NORM, last]
    return np.clip(np.array(feats, dtype=np.float64), 0.0, FEATURE_CAP)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ControllerConfig:
    episodes: int = 1500
    frames_per_episode: int = 40
    gamma: float = 0.99
    actor_lr: float = 1e-3
    critic_lr: float = 3e-3
    entropy_weight: float = 0.01
    hidden: int = 32
    seed: int = 0
    workers: int = 1

    def to_dict(self):
        return asdict(self)


class PolicyModel:
    """Actor (8 -> hidden -> |catalog|, softmax) and critic (8 -> hidden -> 1)."""

    def __init__(self, n_actions: int, hidden: int = 32, seed: int = 0, config=None):
        rng = np.random.default_rng(seed)
        self.n_actions = n_actions
        self.config = config or ControllerConfig(hidden=hidden, seed=seed)
        he = lambda fi, fo: rng.normal(0, np.sqrt(2.0 / fi), (fi, fo))
        self.params = {
            "a1.W": he(STATE_DIM, hidden), "a1.b": np.zeros(hidden),
            "a2.W": rng.normal(0, 0.01, (hidden, n_actions)), "a2.b": np.zeros(n_actions),
            "c1.W": he(STATE_DIM, hidden), "c1.b": np.zeros(hidden),
            "c2.W": rng.normal(0, 0.01, (hidden, 1)), "c2.b": np.zeros(1),
        }

    def logits(self, states: np.ndarray):
        h = np.maximum(states @ self.params["a1.W"] + self.params["a1.b"], 0.0)
        return h @ self.params["a2.W"] + self.params["a2.b"], h

    def probs(self, states: np.ndarray) -> np.ndarray:
        return softmax(self.logits(np.atleast_2d(states))[0])

    def value(self, states: np.ndarray):
        h = np.maximum(np.atleast_2d(states) @ self.params["c1.W"] + self.params["c1.b"], 0.0)
        return (h @ self.params["c2.W"] + self.params["c2.b"])[:, 0], h

    def gradients(self, states, actions, returns, entropy_weight):
        """Mean actor and critic loss gradients over one trajectory.

        actor loss  = -log pi(a|s) * advantage - beta * entropy
        critic loss = advantage^2, advantage = return - V(s)
        """
        p = self.params
        n = len(states)
        v, hc = self.value(states)
        adv = returns - v
        logits, ha = self.logits(states)
        pi = softmax(logits)
        logp = np.log(np.clip(pi, 1e-300, None))
        onehot = np.zeros_like(pi)
        onehot[np.arange(n), actions] = 1.0
        # d(-logpi(a) * adv)/dlogits = (pi - onehot) * adv
        dlog = (pi - onehot) * adv[:, None]
        # entropy H = -sum pi logpi; dH/dlogits = -pi * (logpi + H)
        ent = -np.sum(pi * logp, axis=1)
        dlog -= entropy_weight * (-pi * (logp + ent[:, None]))
        dlog /= n
        g = {"a2.W": ha.T @ dlog, "a2.b": dlog.sum(0)}
        dha = (dlog @ p["a2.W"].T) * (ha > 0)
        g["a1.W"], g["a1.b"] = states.T @ dha, dha.sum(0)
        dv = (-2.0 * adv / n)[:, None]
        g["c2.W"], g["c2.b"] = hc.T @ dv, dv.sum(0)
        dhc = (dv @ p["c2.W"].T) * (hc > 0)
        g["c1.W"], g["c1.b"] = states.T @ dhc, dhc.sum(0)
        losses = (float(np.mean(-logp[np.arange(n), actions] * adv - entropy_weight * ent)),
                  float(np.mean(adv**2)))
        return g, losses

    def to_bytes(self) -> bytes:
        meta = {"n_actions": self.n_actions, "config": self.config.to_dict()}
        return pack("policy", meta, {k: v for k, v in self.params.items()})

    @classmethod
    def from_bytes(cls, data: bytes) -> "PolicyModel":
        kind, meta, arrays = unpack(data)
        if kind != "policy":
            raise ValueError(f"container holds a {kind!r}, not a policy")
        cfg = ControllerConfig(**meta["config"])
        pm = cls(meta["n_actions"], cfg.hidden, cfg.seed, cfg)
        pm.params = {k: v.astype(np.float64) for k, v in arrays.items()}
        return pm

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PolicyModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def select_action(probs: np.ndarray, mode: str = "greedy", rng=None) -> int:
    """Greedy: argmax with ties to the lowest index. Sample: inverse-CDF draw."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    if len(probs) == 0:
        raise ValueError("empty action distribution")
    if mode == "greedy":
        return int(np.argmax(probs))
    if mode != "sample":
        raise ValueError(f"unknown mode {mode!r}")
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(probs) - 1))


class PolicyAgent:
    """Adapter giving a :class:`PolicyModel` the ``act(context)`` interface."""

    def __init__(self, policy: PolicyModel, mode: str = "greedy", rng=None):
        self.policy = policy
        self.mode = mode
        self.rng = rng

    def act(self, ctx: SessionContext) -> int:
        return select_action(self.policy.probs(observe(ctx))[0], self.mode, self.rng)


class _Adam:
    def __init__(self, params, lr_of, b1=0.9, b2=0.999):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.lr_of, self.b1, self.b2, self.t = lr_of, b1, b2, 0

    def step(self, params, grads):
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1**self.t)
            vh = self.v[k] / (1 - self.b2**self.t)
            params[k] -= self.lr_of(k) * mh / (np.sqrt(vh) + 1e-8)


@dataclass
class Environment:
    """Draws a (network profile, device level, trace seed) per episode."""

    catalog: object
    profiles: dict = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    device_levels: tuple = (1, 2, 3, 4)
    trace_duration: float = 60.0
    trace_interval: float = 1.0
    n_patches: int = 200
    t_budget: float = 1.0 / 30.0
    target_fps: float = 30.0
    fixed_trace: BandwidthTrace | None = None

    def draw(self, rng):
        names = sorted(self.profiles)
        prof = self.profiles[names[rng.integers(len(names))]]
        level = int(self.device_levels[rng.integers(len(self.device_levels))])
        if self.fixed_trace is not None:
            trace = self.fixed_trace
        else:
            trace = synth_trace(prof, self.trace_duration, self.trace_interval,
                                int(rng.integers(2**31)))
        return prof, DeviceProfile(level), trace, int(rng.integers(2**31))

    def episode(self, agent, n_frames, rng, record=None):
        prof, dev, trace, seed = self.draw(rng)
        return simulate_session(n_frames, agent, trace, dev, self.catalog, prof,
                                t_budget=self.t_budget, n_patches=self.n_patches,
                                target_fps=self.target_fps, seed=seed, on_step=record)


@dataclass
class EpisodeLog:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray

    @property
    def ret(self) -> float:
        return float(self.rewards.sum())

    def discounted(self, gamma: float) -> np.ndarray:
        out = np.zeros(len(self.rewards))
        acc = 0.0
        for i in range(len(self.rewards) - 1, -1, -1):
            acc = self.rewards[i] + gamma * acc
            out[i] = acc
        return out


@dataclass
class TrainingCurve:
    returns: list[float] = field(default_factory=list)
    discounted: list[float] = field(default_factory=list)
    frames_per_episode: int = 1

    def moving_average(self, window: int = 100) -> np.ndarray:
        r = np.asarray(self.returns)
        c = np.concatenate([[0.0], np.cumsum(r)])
        idx = np.arange(1, len(r) + 1)
        lo = np.maximum(0, idx - window)
        return (c[idx] - c[lo]) / (idx - lo)

    def to_csv(self, path, window: int = 100) -> None:
        ma = self.moving_average(window)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "return", "discounted_return", "moving_avg"])
            for i, (r, d, m) in enumerate(zip(self.returns, self.discounted, ma)):
                w.writerow([i, repr(float(r)), repr(float(d)), repr(float(m))])


def ma_slope(curve: TrainingCurve, end: int, window: int = 100) -> float:
    """Least-squares slope of the moving average over ``[end - window, end)``,
    expressed per episode in per-frame reward units."""
    ma = curve.moving_average(window)[max(0, end - window) : end]
    x = np.arange(len(ma), dtype=np.float64)
    return float(np.polyfit(x, ma, 1)[0]) / curve.frames_per_episode


def plateau_episode(curve: TrainingCurve, window: int = 100, tol: float = 1e-4):
    """First episode (after two full windows) where the moving-average slope drops below ``tol``."""
    for end in range(2 * window, len(curve.returns) + 1):
        if ma_slope(curve, end, window) < tol:
            return end
    return None


def run_episode(env: Environment, policy: PolicyModel, n_frames: int, rng) -> EpisodeLog:
    states, actions = [], []
    agent = PolicyAgent(policy, "sample", rng)

    def record(ctx, action, rec):
        s = observe(ctx)
        states.append(s)
        actions.append(action)

    res = env.episode(agent, n_frames, rng, record)
    st = np.array(states)
    return EpisodeLog(st, np.array(actions), np.array([f.qoe for f in res.frames]),
                      policy.value(st)[0])


def train_controller(env: Environment, config: ControllerConfig = ControllerConfig(),
                     progress=None) -> tuple[PolicyModel, TrainingCurve]:
    """Advantage actor-critic; ``workers > 1`` runs asynchronous workers on shared weights.

    With one worker the run is bit-reproducible for a given seed.
    ``progress(episode, return, policy)`` runs after each update.
    """
    n_actions = len(env.catalog)
    policy = PolicyModel(n_actions, config.hidden, config.seed, config)
    opt = _Adam(policy.params, lambda k: config.actor_lr if k[0] == "a" else config.critic_lr)
    curve = TrainingCurve(frames_per_episode=config.frames_per_episode)
    lock = threading.Lock()
    counter = [0]

    def update(log_: EpisodeLog):
        rets = log_.discounted(config.gamma)
        with lock:
            g, (la, lc) = policy.gradients(log_.states, log_.actions, rets, config.entropy_weight)
            if not (np.isfinite(la) and np.isfinite(lc)):
                raise ControllerDivergence(
                    f"non-finite loss at episode {counter[0]}: actor={la} critic={lc}")
            opt.step(policy.params, g)
            curve.returns.append(log_.ret)
            curve.discounted.append(float(rets[0]))
            counter[0] += 1
            if progress is not None:
                progress(counter[0] - 1, log_.ret, policy)

    if config.workers <= 1:
        rng = np.random.default_rng(config.seed)
        for _ in range(config.episodes):
            update(run_episode(env, policy, config.frames_per_episode, rng))
        return policy, curve

    errors = []

    def worker(wid):
        rng = np.random.default_rng([config.seed, wid])
        try:
            while True:
                with lock:
                    if counter[0] >= config.episodes:
                        return
                    snapshot = PolicyModel(n_actions, config.hidden, config.seed, config)
                    snapshot.params = {k: v.copy() for k, v in policy.params.items()}
                ep = run_episode(env, snapshot, config.frames_per_episode, rng)
                with lock:
                    if counter[0] >= config.episodes:
                        return
                # gradients are taken at the shared weights current at apply time
                update(ep)
        except Exception as exc:  # surfaced after join
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(w,)) for w in range(config.workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return policy, curve


@dataclass(frozen=True)
class EvalRow:
    trace: str
    device_level: int
    policy: str
    mean_qoe: float
    spearman_bw_latent: float


EVAL_COLUMNS = ["trace", "device_level", "policy", "mean_qoe", "spearman_bw_latent"]


def bandwidth_latent_correlation(session, catalog) -> float:
    bw = [f.bw_mbps for f in session.frames]
    lat = [catalog[f.model_id].latent for f in session.frames]
    if len(set(lat)) < 2 or len(set(bw)) < 2:
        return float("nan")
    return float(spearmanr(bw, lat).statistic)


def evaluate(policy: PolicyModel, traces: dict, devices, catalog, n_frames: int = 100,
             profiles: dict | None = None, seed: int = 0, n_patches: int = 200,
             t_budget: float = 1.0 / 30.0) -> list[EvalRow]:
    """Greedy policy vs every fixed catalog model on each (trace, device) pair.

    ``traces`` maps a name to a trace; a matching entry in ``profiles`` supplies
    delay and jitter.
    """
    rows = []
    for tname, trace in traces.items():
        prof = (profiles or {}).get(tname)
        for level in devices:
            dev = DeviceProfile(level)
            kw = dict(profile=prof, seed=seed, n_patches=n_patches, t_budget=t_budget)
            s = simulate_session(n_frames, PolicyAgent(policy), trace, dev, catalog, **kw)
            rows.append(EvalRow(tname, level, "adaptive", s.mean_qoe,
                                bandwidth_latent_correlation(s, catalog)))
            for i, e in enumerate(catalog):
                s = simulate_session(n_frames, i, trace, dev, catalog, **kw)
                rows.append(EvalRow(tname, level, f"fixed_{e.h:02d}x{e.w:02d}", s.mean_qoe,
                                    float("nan")))
    return rows


def write_eval_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_COLUMNS)
        for r in rows:
            w.writerow([csv_value(v) for v in asdict(r).values()])
