"""Trace-driven transmission and device decode-time simulation."""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .metrics import DEFAULT_T_BUDGET, csv_value, qoe

MIN_BW_MBPS = 0.1
CORES = {1: 1, 2: 2, 3: 4, 4: 8}
QUANT_SPEEDUP = {"float32": 1.0, "int16": 0.75, "int8": 0.5}
OCTREE_OPS_PER_POINT = 64  # decode cost model for the octree baseline


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkProfile:
    name: str
    mean_mbps: float
    std_mbps: float
    delay_ms: float
    jitter_ms: float = 0.0

    def __post_init__(self):
        if not self.mean_mbps > 0 or self.std_mbps < 0 or self.delay_ms < 0 or self.jitter_ms < 0:
            raise SimError(f"invalid network profile {self}")


# synthetic defaults: ordering and rough magnitudes only
DEFAULT_PROFILES = {
    "3G": NetworkProfile("3G", 2.0, 0.5, 60.0, 5.0),
    "4G": NetworkProfile("4G", 20.0, 5.0, 40.0, 4.0),
    "WiFi": NetworkProfile("WiFi", 50.0, 10.0, 10.0, 2.0),
    "5G": NetworkProfile("5G", 200.0, 50.0, 15.0, 2.0),
}


def load_profiles(path) -> dict[str, NetworkProfile]:
    """Profiles from a JSON object ``{name: {mean_mbps, std_mbps, delay_ms, jitter_ms}}``."""
    with open(path) as fh:
        raw = json.load(fh)
    return {name: NetworkProfile(name=name, **vals) for name, vals in raw.items()}


def dump_profiles(path, profiles: dict[str, NetworkProfile]) -> None:
    out = {}
    for name, p in profiles.items():
        d = asdict(p)
        d.pop("name")
        out[name] = d
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)


@dataclass(frozen=True)
class BandwidthTrace:
    """Piecewise-constant bandwidth: sample ``i`` holds from ``t[i]`` to ``t[i+1]``
    (the last one until ``duration``). Time past ``duration`` wraps around."""

    t: tuple[float, ...]
    mbps: tuple[float, ...]
    duration: float

    def __post_init__(self):
        t = tuple(float(v) for v in self.t)
        bw = tuple(float(v) for v in self.mbps)
        if not t or len(t) != len(bw):
            raise SimError("trace needs matching, nonempty time and bandwidth samples")
        if t[0] != 0.0 or any(b <= a for a, b in zip(t, t[1:])):
            raise SimError("trace timestamps must start at 0 and strictly increase")
        if not self.duration > t[-1]:
            raise SimError("trace duration must exceed the last timestamp")
        if any(not b > 0 for b in bw):
            raise SimError("bandwidth samples must be positive")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "mbps", bw)
        ends = t[1:] + (float(self.duration),)
        cum = [0.0]
        for a, b, w in zip(t, ends, bw):
            cum.append(cum[-1] + (b - a) * w * 1e6)
        object.__setattr__(self, "_ends", ends)
        object.__setattr__(self, "_cum", tuple(cum))

    @classmethod
    def constant(cls, mbps: float, duration: float = 1.0) -> "BandwidthTrace":
        return cls((0.0,), (mbps,), duration)

    @classmethod
    def steps(cls, segments: Sequence[tuple[float, float]]) -> "BandwidthTrace":
        """From ``[(seconds, mbps), ...]`` segments laid end to end."""
        t, bw, now = [], [], 0.0
        for length, mbps in segments:
            t.append(now)
            bw.append(mbps)
            now += length
        return cls(tuple(t), tuple(bw), now)

    @property
    def cycle_bits(self) -> float:
        return self._cum[-1]

    def bits_until(self, t: float) -> float:
        """Bits deliverable from time 0 to ``t``."""
        cycles, local = divmod(t, self.duration)
        i = bisect.bisect_right(self.t, local) - 1
        return cycles * self.cycle_bits + self._cum[i] + (local - self.t[i]) * self.mbps[i] * 1e6

    def time_at_bits(self, bits: float) -> float:
        """Inverse of :meth:`bits_until`."""
        cycles, rem = divmod(bits, self.cycle_bits)
        j = bisect.bisect_right(self._cum, rem) - 1
        j = min(j, len(self.t) - 1)
        return cycles * self.duration + self.t[j] + (rem - self._cum[j]) / (self.mbps[j] * 1e6)

    def bandwidth_at(self, t: float) -> float:
        local = math.fmod(t, self.duration)
        return self.mbps[bisect.bisect_right(self.t, local) - 1]

    def mean_mbps(self) -> float:
        return self.cycle_bits / self.duration / 1e6

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "bw_mbps"])
            for a, b in zip(self.t, self.mbps):
                w.writerow([csv_value(a), csv_value(b)])

    @classmethod
    def from_csv(cls, path, duration: float | None = None) -> "BandwidthTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["t_s", "bw_mbps"]:
            raise SimError(f"{path}: expected header t_s,bw_mbps")
        t = [float(r[0]) for r in rows[1:]]
        bw = [float(r[1]) for r in rows[1:]]
        if duration is None:
            step = t[-1] - t[-2] if len(t) > 1 else 1.0
            duration = t[-1] + step
        return cls(tuple(t), tuple(bw), duration)


def synth_trace(profile: NetworkProfile, duration: float, interval: float, seed: int) -> BandwidthTrace:
    """One Gaussian bandwidth draw per interval, clamped below at 0.1 Mbps."""
    if not duration > 0 or not interval > 0:
        raise SimError("duration and interval must be positive")
    n = max(1, int(round(duration / interval)))
    rng = np.random.default_rng(seed)
    bw = np.maximum(MIN_BW_MBPS, rng.normal(profile.mean_mbps, profile.std_mbps, size=n))
    return BandwidthTrace(tuple(np.arange(n) * interval), tuple(bw), n * interval)


def transmit(nbytes: float, trace: BandwidthTrace, t_start: float) -> float:
    """Absolute time at which ``nbytes`` sent from ``t_start`` finish arriving.

    Integrates the piecewise-constant bandwidth exactly, wrapping around the
    trace end as often as needed.
    """
    if not nbytes > 0:
        raise SimError("bytes must be positive")
    if t_start < 0:
        raise SimError("t_start must be non-negative")
    return trace.time_at_bits(trace.bits_until(t_start) + 8.0 * nbytes)


@dataclass(frozen=True)
class DeviceProfile:
    level: int
    base_rate: float = 1e9  # multiply-accumulates per second per core

    def __post_init__(self):
        if self.level not in CORES:
            raise SimError(f"device level must be one of {sorted(CORES)}")
        if not self.base_rate > 0:
            raise SimError("base_rate must be positive")

    @property
    def cores(self) -> int:
        return CORES[self.level]

    @property
    def throughput(self) -> float:
        return self.cores * self.base_rate


def decode_time(model, device: DeviceProfile, n_patches: int = 1) -> float:
    """Seconds to decode ``n_patches`` patches with ``model`` on ``device``.

    ``model`` is anything exposing ``flops_decode`` and ``precision`` (a catalog
    entry) or a :class:`~holopcv.codec.model.CodecModel`.
    """
    flops = model.flops_decode
    precision = getattr(model, "precision", None) or model.spec.precision
    if not flops > 0:
        raise SimError("flops_decode must be positive")
    return n_patches * flops / device.throughput * QUANT_SPEEDUP[precision]


def octree_decode_time(n_points: int, device: DeviceProfile) -> float:
    """Octree decoding is modeled as a fixed op count per reconstructed point."""
    return n_points * OCTREE_OPS_PER_POINT / device.throughput


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    t_start: float
    model_id: int
    model_h: int
    bytes_sent: int
    bw_mbps: float
    t_transmit: float
    t_decode: float
    t_prop: float
    t_total: float
    accuracy: float
    qoe: float


FRAME_COLUMNS = [f.name for f in fields(FrameRecord)]


@dataclass
class SessionResult:
    frames: list[FrameRecord] = field(default_factory=list)

    @property
    def achieved_fps(self) -> float:
        return len(self.frames) / sum(f.t_total for f in self.frames)

    @property
    def mean_qoe(self) -> float:
        return float(np.mean([f.qoe for f in self.frames]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FRAME_COLUMNS)
            for fr in self.frames:
                w.writerow([csv_value(getattr(fr, c)) for c in FRAME_COLUMNS])


@dataclass
class SessionContext:
    """What the controller can see before choosing the next frame's model."""

    throughput_mbps: list[float]
    device_level: int
    target_fps: float
    last_action: int
    n_actions: int
    warmup_mbps: float


class FixedPolicy:
    def __init__(self, index: int):
        self.index = index

    def act(self, context: SessionContext) -> int:
        return self.index


def simulate_session(
    n_frames_or_frames,
    policy,
    trace: BandwidthTrace,
    device: DeviceProfile,
    catalog,
    profile: NetworkProfile | None = None,
    t_budget: float = DEFAULT_T_BUDGET,
    n_patches: int = 200,
    target_fps: float = 30.0,
    seed: int = 0,
    accuracy_fn: Callable | None = None,
    on_step: Callable | None = None,
) -> SessionResult:
    """Stream frames back to back, letting ``policy`` pick a catalog model per frame.

    ``policy`` is an int (fixed model) or has ``act(SessionContext) -> int``.
    Accuracy comes from the catalog entry's measured F-score unless
    ``accuracy_fn(entry_index, frame)`` is given (exact mode over real frames).
    ``on_step(context, action, record)`` sees every decision.
    """
    entries = list(catalog)
    if not entries:
        raise SimError("catalog is empty")
    if isinstance(n_frames_or_frames, int):
        frames = [None] * n_frames_or_frames
    else:
        frames = list(n_frames_or_frames)
    if not frames:
        raise SimError("frame stream is empty")
    if isinstance(policy, (int, np.integer)):
        policy = FixedPolicy(int(policy))
    if profile is None:
        profile = NetworkProfile("custom", trace.mean_mbps(), 0.0, 0.0, 0.0)
    rng = np.random.default_rng(seed)
    ctx = SessionContext([], device.level, target_fps, 0, len(entries), profile.mean_mbps)
    result = SessionResult()
    now = 0.0
    for k, frame in enumerate(frames):
        action = int(policy.act(ctx))
        if not 0 <= action < len(entries):
            raise SimError(f"policy chose action {action} outside the catalog")
        entry = entries[action]
        nbytes = n_patches * entry.bytes_per_patch
        t_tx = transmit(nbytes, trace, now) - now
        t_dec = decode_time(entry, device, n_patches)
        t_prop = max(0.0, profile.delay_ms + profile.jitter_ms * rng.standard_normal()) / 1e3 \
            if profile.jitter_ms > 0 else profile.delay_ms / 1e3
        t_total = t_tx + t_dec + t_prop
        acc = entry.fscore if accuracy_fn is None else float(accuracy_fn(action, frame))
        rep = qoe(acc, t_total, t_budget)
        rec = FrameRecord(k, now, action, entry.h, int(nbytes), trace.bandwidth_at(now),
                          t_tx, t_dec, t_prop, t_total, acc, rep.qoe)
        result.frames.append(rec)
        if on_step is not None:
            on_step(ctx, action, rec)
        ctx = SessionContext(ctx.throughput_mbps + [8.0 * nbytes / t_tx / 1e6], device.level,
                             target_fps, action, len(entries), profile.mean_mbps)
        now += t_total
    return result
