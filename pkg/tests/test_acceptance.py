"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 4-6 and 9-10 train real models and take roughly half an hour on one
core; run just this file with ``pytest -s tests/test_acceptance.py``.
"""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from holopcv import cli
from holopcv.cloud import PointCloud
from holopcv.codec.catalog import CatalogEntry, entry_for, heldout_scores
from holopcv.codec.core import bytes_per_patch, compression_ratio
from holopcv.codec.emd import emd
from holopcv.codec.model import (CodecModel, ModelSpec, flops_decode, init_params, prune,
                                 quantize)
from holopcv.codec.serialize import model_bytes
from holopcv.codec.train import TrainingConfig, train
from holopcv.controller import (ControllerConfig, Environment, PolicyAgent,
                                bandwidth_latent_correlation, evaluate, plateau_episode,
                                train_controller)
from holopcv.datasets import make_shape, patch_set
from holopcv.netsim import (DEFAULT_PROFILES, BandwidthTrace, DeviceProfile, NetworkProfile,
                            simulate_session, synth_trace, transmit)
from holopcv.octree import (OctreeConfig, compression_ratio as octree_ratio, error_bound,
                            octree_decode, octree_encode)

from oracles import brute_force_emd, gradient_check

pytestmark = pytest.mark.slow

TRAIN_CFG = TrainingConfig(lr=2e-3, lr_final=1e-5, epochs=200, batch_size=8, seed=0,
                           optimizer="adam", augment=True)
FINETUNE_EPOCHS = 50
CATALOG_SIZES = (6, 10, 20)
TAU = 0.05


@pytest.fixture(scope="module")
def report(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(n, ok, detail, started):
        line = f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}  ({time.time() - started:.1f} s)"
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return emit


@pytest.fixture(scope="module")
def data():
    train_x = patch_set(["sphere", "cube"], 250, seed=1)
    held = patch_set(["sphere", "cube"], 50, seed=2)
    return train_x, held


@pytest.fixture(scope="module")
def trained(data):
    """Lazily trained catalog models keyed by latent side length."""
    cache = {}

    def get(size):
        if size not in cache:
            t = time.time()
            res = train(ModelSpec.catalog(size), data[0], TRAIN_CFG)
            cache[size] = (res, time.time() - t)
        return cache[size]

    return get


@pytest.fixture(scope="module")
def catalog(trained, data):
    return [entry_for(trained(s)[0].model, data[1], TAU) for s in CATALOG_SIZES]


@pytest.fixture(scope="module")
def mixed_policy(catalog):
    t = time.time()
    policy, curve = train_controller(Environment(catalog), ControllerConfig(episodes=1500))
    return policy, curve, time.time() - t


def test_criterion_01_compression_ratio(report):
    t = time.time()
    spec = ModelSpec.catalog(5)
    model = CodecModel.from_params(spec, init_params(spec, 0))
    ratio = compression_ratio(model.spec, wire_bits=32)
    raw = 256 * 3 * 4
    ok = bytes_per_patch(spec, 32) == 100 and abs(ratio - 30.72) < 1e-9 \
        and abs(ratio - 30.0) <= 0.03 * 30.0 and raw / bytes_per_patch(spec, 32) == ratio
    assert report(1, ok, f"(5,5) ratio={ratio:.4f} (target 30 +/- 3%)", t)


def test_criterion_02_emd_oracle(report):
    t = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 7))
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        worst = max(worst, abs(emd(a, b)[0] - brute_force_emd(a, b)))
    assert report(2, worst <= 1e-9, f"max |hungarian - brute force| = {worst:.2e} over 200 pairs", t)


def test_criterion_03_gradient_check(report):
    t = time.time()
    errs = gradient_check(n_coords=50, seed=0)
    worst = float(np.max(errs))
    assert report(3, worst <= 1e-3 and time.time() - t < 60,
                  f"max relative error {worst:.2e} over 50 coordinates", t)


def test_criterion_04_training_efficacy(report, trained, data):
    t = time.time()
    spec = ModelSpec.catalog(10)
    untrained = CodecModel.from_params(spec, init_params(spec, TRAIN_CFG.seed))
    f0, e0 = heldout_scores(untrained, data[1], TAU)
    res, secs = trained(10)
    f1, e1 = heldout_scores(res.model, data[1], TAU)
    ok = e1 <= 0.5 * e0 and f1 >= 0.8
    assert report(4, ok, f"held-out EMD {e0:.4f} -> {e1:.4f} (ratio {e1 / e0:.3f} <= 0.5), "
                  f"F {f0:.3f} -> {f1:.3f} (need >= 0.8); training {secs:.0f} s", t)


def test_criterion_05_catalog_monotonicity(report, catalog):
    t = time.time()
    fs = [e.fscore for e in catalog]
    drops = sum(b < a for a, b in zip(fs, fs[1:]))
    detail = ", ".join(f"({s},{s}) F={f:.4f}" for s, f in zip(CATALOG_SIZES, fs))
    assert report(5, drops == 0, f"{detail}; violations={drops}", t)


def test_criterion_06_prune_quantize(report, trained, data):
    t = time.time()
    model = trained(10)[0].model
    f_float, _ = heldout_scores(model, data[1], TAU)
    ft_cfg = TrainingConfig(**{**TRAIN_CFG.to_dict(), "epochs": FINETUNE_EPOCHS})
    pruned = train(model.spec, data[0], ft_cfg, init=prune(model, 0.5)).model
    f_pruned, _ = heldout_scores(pruned, data[1], TAU)
    q8 = quantize(model, 8)
    f_q8, _ = heldout_scores(q8, data[1], TAU)
    shrink = len(model_bytes(model)) / len(model_bytes(q8))
    zero = np.mean([np.mean(pruned.params64()[k + ".W"] == 0) for k in pruned.masks])
    ok = abs(f_pruned - f_float) <= 0.05 and abs(f_q8 - f_float) <= 0.05 and shrink >= 3.5
    assert report(6, ok, f"F float={f_float:.4f} pruned50%={f_pruned:.4f} (sparsity "
                  f"{zero:.2f}) int8={f_q8:.4f}; int8 file {shrink:.2f}x smaller", t)


def test_criterion_07_octree(report):
    t = time.time()
    rng = np.random.default_rng(77)
    worst, same = 0.0, True
    for qp in (4, 8):
        for _ in range(100):
            n = int(rng.integers(10, 2000))
            pts = rng.uniform(-1, 1, (n, 3)) * rng.uniform(0.1, 10)
            enc = octree_encode(pts, OctreeConfig(qp, 10))
            dec = octree_decode(enc).points
            side = 2**qp
            origin = np.asarray(enc.origin)
            vox = np.minimum(np.floor((pts - origin) / enc.extent * side), side - 1)
            centers = origin + (vox + 0.5) * enc.extent / side
            same &= {tuple(c) for c in np.round(centers, 12)} == \
                {tuple(c) for c in np.round(dec, 12)}
            err = np.linalg.norm(pts - centers, axis=1).max() / error_bound(enc.extent, qp)
            worst = max(worst, err)
    ratios = []
    for i, shape in enumerate(["sphere", "torus", "cube"]):
        cloud = make_shape(shape, 10_000, i)
        ratios.append(octree_ratio(cloud, octree_encode(cloud, OctreeConfig(8, 10))))
    cloud = PointCloud(rng.random((10_000, 3)))
    ratios.append(octree_ratio(cloud, octree_encode(cloud, OctreeConfig(8, 10))))
    ok = same and worst <= 1 + 1e-9 and min(ratios) >= 5.0
    assert report(7, ok, f"decoded voxels match: {same}; worst error / bound = {worst:.4f}; qp=8 cl=10 ratios "
                  f"{', '.join(f'{r:.2f}' for r in ratios)} (need >= 5)", t)


def stub_entry(size, f=0.7):
    spec = ModelSpec.catalog(size)
    return CatalogEntry(size, size, bytes_per_patch(spec), flops_decode(spec), f)


class CyclePolicy:
    """Cycles through the catalog so every model appears in the timing check."""

    def act(self, ctx):
        return len(ctx.throughput_mbps) % ctx.n_actions


def _hand_integral(segs, t0, bits):
    """Walk repeated constant segments, summing exact capacities."""
    t, left = 0.0, bits
    for length, mbps in itertools.cycle(segs):
        a, b = t, t + length
        t = b
        if b <= t0:
            continue
        a = max(a, t0)
        cap = (b - a) * mbps * 1e6
        if cap >= left:
            return a + left / (mbps * 1e6)
        left -= cap


def test_criterion_08_simulator_exactness(report):
    t = time.time()
    worst = 0.0
    step = BandwidthTrace.steps([(1.0, 4.0), (10.0, 8.0)])
    example = transmit(1e6, step, 0.0)
    worst = abs(example - 1.5)
    worst = max(worst, abs(transmit(1e6 / 8, BandwidthTrace.constant(8.0), 0.0) - 0.125))
    rng = np.random.default_rng(8)
    for _ in range(500):
        segs = [(float(rng.uniform(0.05, 3)), float(rng.uniform(0.5, 300)))
                for _ in range(int(rng.integers(1, 7)))]
        trace = BandwidthTrace.steps(segs)
        t0 = float(rng.uniform(0, 20))
        nbytes = float(rng.uniform(1, 5e7))
        worst = max(worst, abs(transmit(nbytes, trace, t0) - _hand_integral(segs, t0, 8 * nbytes)))
    identity = 0.0
    cat = [stub_entry(s) for s in (6, 10, 20)]
    for level, (name, prof) in itertools.product((1, 4), sorted(DEFAULT_PROFILES.items())):
        trace = synth_trace(prof, 20.0, 0.5, 3)
        s = simulate_session(60, CyclePolicy(), trace, DeviceProfile(level), cat, prof, seed=5)
        now = 0.0
        for f in s.frames:
            identity = max(identity, abs(f.t_total - (f.t_transmit + f.t_decode + f.t_prop)),
                           abs(f.t_start - now),
                           abs(transmit(f.bytes_sent, trace, f.t_start) - f.t_start - f.t_transmit))
            now = f.t_start + f.t_total
    ok = worst <= 1e-9 and identity <= 1e-9
    assert report(8, ok, f"step example {example:.12f} s; max transmit error {worst:.2e} s; "
                  f"max timing-identity residual {identity:.2e} s", t)


def test_criterion_09_controller(report, catalog, mixed_policy):
    t = time.time()
    # deterministic constant-bandwidth environment (4G mean, 4-core device)
    prof = NetworkProfile("const", 20.0, 0.0, 40.0, 0.0)
    trace = BandwidthTrace.constant(20.0)
    env = Environment(catalog, {"const": prof}, (3,), fixed_trace=trace)
    fixed = [simulate_session(40, i, trace, DeviceProfile(3), catalog, prof).mean_qoe
             for i in range(len(catalog))]
    best = int(np.argmax(fixed))
    policy_c, _ = train_controller(env, ControllerConfig(episodes=1500))
    s = simulate_session(40, PolicyAgent(policy_c), trace, DeviceProfile(3), catalog, prof)
    chosen = sorted({f.model_id for f in s.frames})
    ok_const = chosen == [best]

    policy, curve, secs = mixed_policy
    traces = {name: synth_trace(p, 60.0, 1.0, 10_000 + i)
              for i, (name, p) in enumerate(sorted(DEFAULT_PROFILES.items()))}
    rows = evaluate(policy, traces, [1, 2, 3, 4], catalog, 100, DEFAULT_PROFILES, seed=1)
    means = {}
    for r in rows:
        means.setdefault(r.policy, []).append(r.mean_qoe)
    adaptive = float(np.mean(means.pop("adaptive")))
    best_fixed_name, best_fixed = max(((k, float(np.mean(v))) for k, v in means.items()),
                                      key=lambda kv: kv[1])
    ok_suite = adaptive >= best_fixed - 0.02
    plateau = plateau_episode(curve)
    ok_plateau = plateau is not None and plateau <= 1500
    ok = ok_const and ok_suite and ok_plateau
    assert report(9, ok, f"constant env: greedy {chosen} vs exhaustive {best} "
                  f"(fixed QoE {', '.join(f'{q:.4f}' for q in fixed)}); held-out suite: adaptive "
                  f"{adaptive:.4f} vs best fixed {best_fixed_name} {best_fixed:.4f}; plateau at "
                  f"episode {plateau}; mixed training {secs:.0f} s", t)


def test_criterion_10_step_trend(report, catalog, mixed_policy):
    t = time.time()
    policy = mixed_policy[0]
    trace = cli.step_trace(["3G:10", "5G:10"], DEFAULT_PROFILES)
    s = simulate_session(300, PolicyAgent(policy), trace, DeviceProfile(3), catalog)
    rho = bandwidth_latent_correlation(s, catalog)
    low = [catalog[f.model_id].latent for f in s.frames if f.bw_mbps < 10]
    high = [catalog[f.model_id].latent for f in s.frames if f.bw_mbps > 10]
    # oracle: QoE-optimal fixed model on each segment's bandwidth held constant
    best = {}
    for name in ("3G", "5G"):
        flat = BandwidthTrace.constant(DEFAULT_PROFILES[name].mean_mbps)
        q = [simulate_session(40, i, flat, DeviceProfile(3), catalog).mean_qoe
             for i in range(len(catalog))]
        e = catalog[int(np.argmax(q))]
        best[name] = f"({e.h},{e.w})"
    ok = rho > 0.5
    assert report(10, ok, f"spearman rho(bandwidth, latent) = {rho:.3f}; mean latent "
                  f"3G {np.mean(low):.1f} -> 5G {np.mean(high):.1f}; QoE-optimal fixed model "
                  f"3G {best['3G']}, 5G {best['5G']}", t)


DETERMINISM_RUNS = {
    "gen-dataset": ["--shapes", "sphere,torus", "--per-shape", "3", "--points", "4096"],
    "build-catalog": ["--sizes", "5,6", "--per-shape", "6", "--heldout-per-shape", "3",
                      "--epochs", "2", "--batch-size", "4"],
    "train": ["--size", "5", "--per-shape", "6", "--heldout-per-shape", "3", "--epochs", "2",
              "--batch-size", "4", "--prune", "0.5", "--finetune-epochs", "1"],
    "compare-codecs": ["--catalog", "{catalog}", "--shapes", "sphere,torus", "--points",
                       "3000"],
    "fps-sweep": ["--catalog", "{catalog}", "--frames", "20", "--points", "5000"],
    "train-controller": ["--catalog", "{catalog}", "--episodes", "40", "--frames-per-episode",
                         "10", "--eval-frames", "20"],
    "run-session": ["--catalog", "{catalog}", "--policy", "{policy}", "--frames", "60"],
}


def _outputs(out: Path) -> dict:
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file() and p.suffix in (".csv", ".txt", ".bin", ".json")}


def test_criterion_11_determinism(report, tmp_path):
    t = time.time()
    fmt = {"catalog": tmp_path / "a" / "build-catalog",
           "policy": tmp_path / "a" / "train-controller" / "policy.bin"}
    mismatched, codes, n_csv = [], [], 0
    for verb, args in DETERMINISM_RUNS.items():
        outs = []
        for run in "ab":
            out = tmp_path / run / verb
            argv = [verb, "--seed", "3", "--out", str(out)] + [a.format(**fmt) for a in args]
            codes.append(cli.main(argv))
            outs.append(_outputs(out))
        n_csv += sum(k.endswith(".csv") for k in outs[0])
        if outs[0] != outs[1] or not outs[0]:
            mismatched.append(verb)
    ok = not mismatched and all(c == 0 for c in codes)
    assert report(11, ok, f"{len(DETERMINISM_RUNS)} commands run twice, {n_csv} CSVs compared; "
                  f"mismatched: {mismatched or 'none'}", t)
