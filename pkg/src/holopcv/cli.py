"""Command-line front end.

Every verb writes its outputs plus a ``manifest.json`` holding the resolved
configuration and seed into ``--out``; feeding that manifest back through
``--config`` reproduces the run. Exit codes: 0 ok, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cloud import PointCloud, decompose_into_patches, load_patch_dir, normalize_points, reassemble
from .codec.catalog import ModelCatalog, CatalogEntry, build_catalog, heldout_scores
from .codec.core import bytes_per_patch, compression_ratio, reconstruct
from .codec.emd import emd
from .codec.model import CATALOG_SIZES, ModelSpec, prune, quantize
from .codec.serialize import FormatError, deserialize, serialize
from .codec.train import TrainingConfig, TrainingDivergence, train
from .controller import (ControllerConfig, Environment, PolicyAgent, PolicyModel,
                         bandwidth_latent_correlation, evaluate, plateau_episode,
                         train_controller, write_eval_csv)
from .datasets import SHAPES, gen_dataset, make_shape, patch_set
from .metrics import DEFAULT_TAU, csv_value, precision_recall_f, qoe
from .netsim import (DEFAULT_PROFILES, OCTREE_OPS_PER_POINT, BandwidthTrace, DeviceProfile,
                     SimError, decode_time, load_profiles, octree_decode_time,
                     simulate_session, synth_trace, transmit)
from .octree import OctreeConfig, OctreeError, octree_decode, octree_encode
from .octree import compression_ratio as octree_ratio
from .plyio import PlyError, load_ply

log = logging.getLogger("holopcv")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
EMD_SUBSAMPLE = 1024


class UserError(Exception):
    """Bad input: reported on stderr, exit code 1."""


_TRAIN = {"lr": 2e-3, "lr_final": 1e-5, "epochs": 200, "batch_size": 8, "optimizer": "adam",
          "augment": True}

DEFAULTS = {
    "gen-dataset": {"shapes": ["sphere", "cube"], "per_shape": 100, "points": 16384,
                    "noise": 0.0},
    "train": {"data": None, "heldout": None, "shapes": ["sphere", "cube"], "per_shape": 250,
              "heldout_per_shape": 50, "size": 10, **_TRAIN, "prune": None,
              "finetune_epochs": 50, "quantize": None, "tau": DEFAULT_TAU},
    "build-catalog": {"data": None, "heldout": None, "shapes": ["sphere", "cube"],
                      "per_shape": 250, "heldout_per_shape": 50,
                      "sizes": list(CATALOG_SIZES), **_TRAIN, "tau": DEFAULT_TAU},
    "compare-codecs": {"catalog": None, "model": None, "inputs": [],
                       "shapes": ["sphere", "torus"], "points": 10000, "patches": None,
                       "qp": 8, "cl": 10, "profiles": None, "device_level": 3,
                       "tau": DEFAULT_TAU},
    "fps-sweep": {"catalog": None, "levels": [1, 2, 3, 4], "frames": 60, "profile": "WiFi",
                  "profiles": None, "shape": "sphere", "points": 25600, "qp": 8, "cl": 10,
                  "n_patches": 200, "qoe_tolerance": 0.05, "tau": DEFAULT_TAU},
    "train-controller": {"catalog": None, "profiles": None, "levels": [1, 2, 3, 4],
                         "episodes": 1500, "frames_per_episode": 40, "gamma": 0.99,
                         "actor_lr": 1e-3, "critic_lr": 3e-3, "entropy_weight": 0.01,
                         "hidden": 32, "workers": 1, "n_patches": 200, "eval_frames": 100},
    "run-session": {"catalog": None, "policy": None, "trace": None,
                    "steps": ["3G:10", "5G:10"], "profiles": None, "level": 3,
                    "frames": 300, "n_patches": 200},
}


# ---------------------------------------------------------------- helpers

def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([csv_value(v) for v in r])


def _profiles(cfg) -> dict:
    if cfg.get("profiles"):
        return load_profiles(cfg["profiles"])
    return dict(DEFAULT_PROFILES)


def _training_config(cfg, seed: int, epochs: int | None = None) -> TrainingConfig:
    return TrainingConfig(lr=cfg["lr"], lr_final=cfg["lr_final"],
                          epochs=epochs or cfg["epochs"], batch_size=cfg["batch_size"],
                          optimizer=cfg["optimizer"], augment=bool(cfg["augment"]), seed=seed)


def _check_shapes(shapes) -> None:
    bad = [s for s in shapes if s not in SHAPES]
    if bad:
        raise UserError(f"unknown shape(s) {bad}; choose from {list(SHAPES)}")


def _patches(cfg, seed: int):
    """Training and held-out patch arrays from directories or synthetic shapes."""
    if cfg["data"]:
        train_x = np.stack([p.points for p in load_patch_dir(cfg["data"])]) \
            if Path(cfg["data"]).is_dir() else None
        if train_x is None or len(train_x) == 0:
            raise UserError(f"no patch files found in {cfg['data']}")
    else:
        _check_shapes(cfg["shapes"])
        train_x = patch_set(cfg["shapes"], cfg["per_shape"], seed)
    if cfg["heldout"]:
        held = load_patch_dir(cfg["heldout"])
        if not held:
            raise UserError(f"no patch files found in {cfg['heldout']}")
        held_x = np.stack([p.points for p in held])
    else:
        _check_shapes(cfg["shapes"])
        held_x = patch_set(cfg["shapes"], cfg["heldout_per_shape"], seed + 1)
    return train_x, held_x


def _load_catalog(cfg, load_models: bool = False) -> ModelCatalog:
    if not cfg.get("catalog"):
        raise UserError("--catalog is required")
    path = Path(cfg["catalog"])
    if path.is_dir():
        path = path / "catalog.json"
    if not path.is_file():
        raise UserError(f"catalog manifest not found: {path}")
    try:
        return ModelCatalog.read_manifest(path, load_models)
    except FileNotFoundError as exc:
        raise UserError(f"catalog model file missing: {exc.filename}") from exc


def _load_model(path):
    try:
        return deserialize(path)
    except FileNotFoundError as exc:
        raise UserError(f"model file not found: {path}") from exc


def _subsampled_emd(a: np.ndarray, b: np.ndarray, seed: int) -> float:
    """EMD between equal-size seeded subsamples; identical inputs give exactly 0."""
    m = min(EMD_SUBSAMPLE, len(a), len(b))
    ia = np.sort(np.random.default_rng(seed).choice(len(a), m, replace=False))
    ib = np.sort(np.random.default_rng(seed).choice(len(b), m, replace=False))
    return emd(a[ia], b[ib])[0]


def octree_entry(cloud: PointCloud, config: OctreeConfig, tau: float = DEFAULT_TAU):
    """A catalog-compatible entry for the octree baseline coding one whole frame.

    Use it with ``n_patches=1``: the frame is a single unit of transmission.
    """
    enc = octree_encode(cloud, config)
    dec = octree_decode(enc)
    f = precision_recall_f(dec.points, cloud.points, tau).fscore
    return CatalogEntry(0, 0, enc.nbytes, len(dec) * OCTREE_OPS_PER_POINT, f)


# ---------------------------------------------------------------- verbs

def cmd_gen_dataset(cfg, seed, out: Path) -> dict:
    _check_shapes(cfg["shapes"])
    if cfg["per_shape"] < 1:
        raise UserError("per_shape must be positive")
    paths = gen_dataset(cfg["shapes"], cfg["per_shape"], seed, out / "patches",
                        n_points=cfg["points"], noise=cfg["noise"])
    return {"outputs": [str(p.relative_to(out)) for p in paths]}


def _curve_rows(curve):
    best = np.minimum.accumulate(curve)
    return [(i, float(l), float(b)) for i, (l, b) in enumerate(zip(curve, best))]


def cmd_train(cfg, seed, out: Path) -> dict:
    x, held = _patches(cfg, seed)
    spec = ModelSpec.catalog(cfg["size"])
    res = train(spec, x, _training_config(cfg, seed),
                progress=lambda e, l: log.info("epoch %d loss %.6f", e, l))
    _write_csv(out / "loss_curve.csv", ["epoch", "loss", "best_loss"], _curve_rows(res.loss_curve))
    outputs = ["loss_curve.csv"]
    model = res.model
    results = {"best_epoch": res.best_epoch}
    if cfg["prune"]:
        ft = train(spec, x, _training_config(cfg, seed, cfg["finetune_epochs"]),
                   init=prune(model, cfg["prune"]))
        _write_csv(out / "finetune_curve.csv", ["epoch", "loss", "best_loss"],
                   _curve_rows(ft.loss_curve))
        outputs.append("finetune_curve.csv")
        model = ft.model
    if cfg["quantize"]:
        model = quantize(model, cfg["quantize"])
    serialize(model, out / "model.bin")
    outputs.append("model.bin")
    f, e = heldout_scores(model, held, cfg["tau"])
    results.update(heldout_fscore=f, heldout_emd=e)
    return {"outputs": outputs, "results": results}


def cmd_build_catalog(cfg, seed, out: Path) -> dict:
    x, held = _patches(cfg, seed)
    sizes = cfg["sizes"]
    bad = [s for s in sizes if s < 1]
    if bad or not sizes:
        raise UserError(f"invalid catalog sizes {sizes}")
    curves: dict[int, list] = {}
    cat = build_catalog(x, held, sizes, _training_config(cfg, seed), out, cfg["tau"],
                        progress=lambda s, e, l: curves.setdefault(s.h, []).append(l))
    rows = []
    for e in cat:
        spec = ModelSpec.catalog(e.h)
        rows.append((e.h, e.w, e.latent, e.bytes_per_patch, compression_ratio(spec),
                     e.flops_decode, e.fscore, e.emd))
    _write_csv(out / "rate_accuracy.csv", ["h", "w", "latent", "bytes_per_patch",
                                            "compression_ratio", "flops_decode", "fscore",
                                            "emd"], rows)
    _write_csv(out / "loss_curves.csv", ["h", "epoch", "loss"],
               [(h, i, float(l)) for h, c in curves.items() for i, l in enumerate(c)])
    outputs = [e.model_file for e in cat] + ["catalog.json", "rate_accuracy.csv",
                                            "loss_curves.csv"]
    return {"outputs": outputs,
            "results": {"fscores": {f"{e.h}x{e.w}": e.fscore for e in cat},
                        "monotonicity_violations": [list(v) for v in cat.violations]}}


COMPARE_COLUMNS = ["input", "codec", "n_points", "bytes", "ratio", "precision", "recall",
                   "fscore", "chamfer", "emd", "profile", "t_transmit", "t_decode", "t_prop",
                   "t_total", "qoe"]


def _inputs(cfg, seed):
    if cfg["inputs"]:
        out = []
        for path in cfg["inputs"]:
            try:
                out.append((Path(path).name, load_ply(path).points))
            except FileNotFoundError as exc:
                raise UserError(f"input not found: {path}") from exc
        return out
    _check_shapes(cfg["shapes"])
    return [(name, make_shape(name, cfg["points"], seed + j).points)
            for j, name in enumerate(cfg["shapes"])]


def cmd_compare_codecs(cfg, seed, out: Path) -> dict:
    if cfg["model"]:
        models = [_load_model(cfg["model"])]
    elif cfg["catalog"]:
        cat = _load_catalog(cfg, load_models=True)
        models = [cat.models[i] for i in sorted(cat.models)]
    else:
        raise UserError("compare-codecs needs --model or --catalog")
    profiles = _profiles(cfg)
    device = DeviceProfile(cfg["device_level"])
    tau = cfg["tau"]
    rows = []
    for name, raw in _inputs(cfg, seed):
        pts, _, _ = normalize_points(raw)
        cloud = PointCloud(pts)
        n = len(pts)
        coded = []  # (codec, bytes, ratio, reconstruction, t_decode)
        n_patches = cfg["patches"] or min(n, math.ceil(2 * n / 256))
        decomp = decompose_into_patches(cloud, 256, n_patches)
        batch = np.stack([p.points for p in decomp.patches])
        for m in models:
            rec = reassemble(decomp, reconstruct(m, batch)).points
            nb = n_patches * bytes_per_patch(m.spec)
            label = f"neural_{m.spec.h:02d}x{m.spec.w:02d}_{m.spec.precision}"
            coded.append((label, nb, compression_ratio(m.spec), rec,
                          decode_time(m, device, n_patches)))
        oc = OctreeConfig(cfg["qp"], cfg["cl"])
        enc = octree_encode(cloud, oc)
        dec = octree_decode(enc).points
        coded.append((f"octree_qp{oc.qp}_cl{oc.cl}", enc.nbytes, octree_ratio(cloud, enc), dec,
                      octree_decode_time(len(dec), device)))
        coded.append(("identity", 12 * n, 1.0, pts, 0.0))
        for codec, nb, ratio, rec, t_dec in coded:
            acc = precision_recall_f(rec, pts, tau)
            e = _subsampled_emd(rec, pts, seed)
            for pname in sorted(profiles):
                prof = profiles[pname]
                t_tx = transmit(nb, BandwidthTrace.constant(prof.mean_mbps), 0.0)
                t_prop = prof.delay_ms / 1e3
                t_total = t_tx + t_dec + t_prop
                rows.append((name, codec, n, int(nb), float(ratio), acc.precision, acc.recall,
                             acc.fscore, acc.chamfer, float(e), pname, t_tx, t_dec, t_prop,
                             t_total, qoe(acc.fscore, t_total).qoe))
    _write_csv(out / "compare.csv", COMPARE_COLUMNS, rows)
    return {"outputs": ["compare.csv"]}


FPS_COLUMNS = ["device_level", "cores", "codec", "model_h", "fps", "mean_qoe"]


def cmd_fps_sweep(cfg, seed, out: Path) -> dict:
    cat = _load_catalog(cfg)
    entries = list(cat)
    profiles = _profiles(cfg)
    if cfg["profile"] not in profiles:
        raise UserError(f"unknown profile {cfg['profile']!r}")
    prof = profiles[cfg["profile"]]
    trace = synth_trace(prof, 60.0, 1.0, seed)
    _check_shapes([cfg["shape"]])
    cloud = PointCloud(normalize_points(make_shape(cfg["shape"], cfg["points"], seed).points)[0])
    oct_entry = octree_entry(cloud, OctreeConfig(cfg["qp"], cfg["cl"]), cfg["tau"])
    rows = []
    for level in cfg["levels"]:
        dev = DeviceProfile(level)
        kw = dict(profile=prof, seed=seed)
        fixed = []
        for i, e in enumerate(entries):
            s = simulate_session(cfg["frames"], i, trace, dev, entries,
                                 n_patches=cfg["n_patches"], **kw)
            fixed.append((e, s.achieved_fps, s.mean_qoe))
            rows.append((level, dev.cores, f"fixed_{e.h:02d}x{e.w:02d}", e.h, s.achieved_fps,
                         s.mean_qoe))
        s = simulate_session(cfg["frames"], 0, trace, dev, [oct_entry], n_patches=1, **kw)
        rows.append((level, dev.cores, "octree", 0, s.achieved_fps, s.mean_qoe))
        # adaptive: fastest model whose QoE is within tolerance of the best fixed QoE
        best_q = max(q for _, _, q in fixed)
        ok = [t for t in fixed if t[2] >= best_q - cfg["qoe_tolerance"]]
        e, fps, q = max(ok, key=lambda t: (t[1], t[2]))
        rows.append((level, dev.cores, "adaptive", e.h, fps, q))
    _write_csv(out / "fps_sweep.csv", FPS_COLUMNS, rows)
    return {"outputs": ["fps_sweep.csv"]}


def _heldout_traces(profiles, seed):
    traces = {name: synth_trace(p, 60.0, 1.0, seed + 10_000 + i)
              for i, (name, p) in enumerate(sorted(profiles.items()))}
    return traces


def step_trace(steps, profiles) -> BandwidthTrace:
    """``["3G:10", "5G:10"]`` -> profile mean bandwidths held for the given seconds."""
    segs = []
    for item in steps:
        name, _, secs = str(item).partition(":")
        if name not in profiles:
            raise UserError(f"unknown profile {name!r} in step {item!r}")
        try:
            segs.append((float(secs), profiles[name].mean_mbps))
        except ValueError as exc:
            raise UserError(f"bad step {item!r}; expected NAME:SECONDS") from exc
    return BandwidthTrace.steps(segs)


def cmd_train_controller(cfg, seed, out: Path) -> dict:
    cat = _load_catalog(cfg)
    profiles = _profiles(cfg)
    env = Environment(cat.entries, profiles, tuple(cfg["levels"]), n_patches=cfg["n_patches"])
    ccfg = ControllerConfig(episodes=cfg["episodes"], frames_per_episode=cfg["frames_per_episode"],
                            gamma=cfg["gamma"], actor_lr=cfg["actor_lr"],
                            critic_lr=cfg["critic_lr"], entropy_weight=cfg["entropy_weight"],
                            hidden=cfg["hidden"], seed=seed, workers=cfg["workers"])
    policy, curve = train_controller(env, ccfg)
    policy.save(out / "policy.bin")
    curve.to_csv(out / "training_curve.csv")
    rows = evaluate(policy, _heldout_traces(profiles, seed), cfg["levels"], cat.entries,
                    cfg["eval_frames"], profiles, seed, cfg["n_patches"])
    write_eval_csv(out / "eval.csv", rows)
    return {"outputs": ["policy.bin", "training_curve.csv", "eval.csv"],
            "results": {"plateau_episode": plateau_episode(curve),
                        "adaptive_mean_qoe": float(np.mean([r.mean_qoe for r in rows
                                                            if r.policy == "adaptive"]))}}


TIMELINE_COLUMNS = ["t_s", "bw_mbps", "model_h", "qoe"]


def cmd_run_session(cfg, seed, out: Path) -> dict:
    cat = _load_catalog(cfg)
    if not cfg["policy"]:
        raise UserError("run-session needs --policy")
    try:
        policy = PolicyModel.load(cfg["policy"])
    except FileNotFoundError as exc:
        raise UserError(f"policy file not found: {cfg['policy']}") from exc
    profiles = _profiles(cfg)
    trace = BandwidthTrace.from_csv(cfg["trace"]) if cfg["trace"] else \
        step_trace(cfg["steps"], profiles)
    s = simulate_session(cfg["frames"], PolicyAgent(policy), trace, DeviceProfile(cfg["level"]),
                         cat.entries, seed=seed, n_patches=cfg["n_patches"])
    _write_csv(out / "timeline.csv", TIMELINE_COLUMNS,
               [(f.t_start, f.bw_mbps, f.model_h, f.qoe) for f in s.frames])
    s.to_csv(out / "frames.csv")
    trace.to_csv(out / "trace.csv")
    rho = bandwidth_latent_correlation(s, cat.entries)
    return {"outputs": ["timeline.csv", "frames.csv", "trace.csv"],
            "results": {"mean_qoe": s.mean_qoe, "achieved_fps": s.achieved_fps,
                        "spearman_bw_latent": None if math.isnan(rho) else rho}}


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "build-catalog": cmd_build_catalog,
    "compare-codecs": cmd_compare_codecs,
    "fps-sweep": cmd_fps_sweep,
    "train-controller": cmd_train_controller,
    "run-session": cmd_run_session,
}


# ---------------------------------------------------------------- parsing

HELP = {
    "gen-dataset": "write normalized synthetic patches in the patch dump format",
    "train": "train one codec model, optionally prune/fine-tune and quantize",
    "build-catalog": "train one model per latent size and write catalog.json",
    "compare-codecs": "rate/accuracy/latency table for neural, octree and identity codecs",
    "fps-sweep": "achieved FPS per device level and codec under one network profile",
    "train-controller": "train the actor-critic model selector and evaluate it",
    "run-session": "stream with a trained policy and write the bandwidth/model timeline",
}

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def _flag(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _csv_list(kind):
    def parse(text):
        return [kind(v) for v in text.split(",") if v]
    return parse


_FLAGS = {
    # key: (type, help)
    "shapes": (_csv_list(str), "comma-separated shape names"),
    "per_shape": (int, "patches per shape"),
    "heldout_per_shape": (int, "held-out patches per shape"),
    "points": (int, "points per synthetic cloud"),
    "noise": (float, "gaussian noise std"),
    "data": (str, "directory of training patch files"),
    "heldout": (str, "directory of held-out patch files"),
    "size": (int, "latent side length h (= w)"),
    "sizes": (_csv_list(int), "comma-separated latent side lengths"),
    "lr": (float, "initial learning rate"),
    "lr_final": (float, "final learning rate of the cosine schedule"),
    "epochs": (int, "training epochs"),
    "batch_size": (int, "minibatch size"),
    "optimizer": (str, "sgd or adam"),
    "augment": (_flag, "random cube-symmetry augmentation (true/false)"),
    "prune": (float, "magnitude-prune to this sparsity and fine-tune"),
    "finetune_epochs": (int, "fine-tuning epochs after pruning"),
    "quantize": (int, "quantize weights to 8 or 16 bits"),
    "tau": (float, "F-score distance threshold"),
    "catalog": (str, "catalog directory or catalog.json"),
    "model": (str, "serialized model file"),
    "inputs": (_csv_list(str), "comma-separated PLY files"),
    "patches": (int, "patches per input cloud"),
    "qp": (int, "octree quantization bits"),
    "cl": (int, "octree compression level"),
    "profiles": (str, "network profile JSON"),
    "profile": (str, "network profile name"),
    "device_level": (int, "device level 1-4"),
    "levels": (_csv_list(int), "comma-separated device levels"),
    "level": (int, "device level 1-4"),
    "frames": (int, "frames to simulate"),
    "shape": (str, "synthetic shape for the octree frame"),
    "n_patches": (int, "patches per frame"),
    "qoe_tolerance": (float, "QoE slack for adaptive selection"),
    "episodes": (int, "training episodes"),
    "frames_per_episode": (int, "frames per episode"),
    "gamma": (float, "discount factor"),
    "actor_lr": (float, "actor learning rate"),
    "critic_lr": (float, "critic learning rate"),
    "entropy_weight": (float, "entropy bonus weight"),
    "hidden": (int, "hidden units"),
    "workers": (int, "asynchronous workers (1 = deterministic)"),
    "eval_frames": (int, "frames per evaluation session"),
    "policy": (str, "trained policy file"),
    "trace": (str, "bandwidth trace CSV (t_s,bw_mbps)"),
    "steps": (_csv_list(str), "step trace as NAME:SECONDS,..."),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (or a previous manifest.json)")
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--out", default=None, help="output directory (default out/<verb>)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="holopcv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for verb, defaults in DEFAULTS.items():
        p = sub.add_parser(verb, parents=[common], help=HELP[verb])
        for key in defaults:
            kind, text = _FLAGS[key]
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=kind, default=None,
                           help=f"{text} (default {defaults[key]!r})")
    return parser


def resolve(verb: str, args: argparse.Namespace) -> tuple[dict, int]:
    """Defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS[verb])
    seed = 0
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UserError(f"cannot read config {args.config}: {exc}") from exc
        if "command" in doc and "config" in doc:  # a manifest
            if doc["command"] != verb:
                raise UserError(f"manifest is for {doc['command']!r}, not {verb!r}")
            seed = doc.get("seed", seed)
            doc = doc["config"]
        else:
            doc = doc.get(verb, doc)
            seed = doc.get("seed", seed)
        unknown = set(doc) - set(cfg) - {"seed"}
        if unknown:
            raise UserError(f"unknown config keys for {verb}: {sorted(unknown)}")
        cfg.update({k: v for k, v in doc.items() if k != "seed"})
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.seed is not None:
        seed = args.seed
    if seed < 0:
        raise UserError("seed must be non-negative")
    return cfg, seed


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors, --help and --version
        return exc.code if isinstance(exc.code, int) else EXIT_USER
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    verb = args.command
    try:
        cfg, seed = resolve(verb, args)
        out = Path(args.out or Path("out") / verb)
        out.mkdir(parents=True, exist_ok=True)
        info = COMMANDS[verb](cfg, seed, out)
        manifest = {"command": verb, "seed": seed, "config": cfg, "version": __version__,
                    **info}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except TrainingDivergence as exc:
        print(f"holopcv {verb}: {exc}", file=sys.stderr)
        return EXIT_USER
    except (UserError, ValueError, FormatError, PlyError, OctreeError, SimError) as exc:
        # ValueError covers the library's validation errors (CloudError, ModelError, ...)
        print(f"holopcv {verb}: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"holopcv {verb}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
