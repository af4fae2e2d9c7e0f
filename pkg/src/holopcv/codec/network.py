"""Batched forward and reverse-mode passes of the patch encoder-decoder.

Encoder: two set-abstraction stages (FPS centroids, kNN groups, shared
per-point MLP, max-pool), a global max-pool and a linear map to the latent.
Stage one sees group coordinates relative to their centroid; stage two sees
stage-one features together with the absolute centroid coordinates.

Decoder: a fully connected head emits ``up_ratio * n`` coarse points, FPS
keeps ``n`` of them, and a per-point MLP conditioned on a projection of the
latent adds refinement offsets.

Everything is float64 and operates on a batch axis ``B``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cloud import batched_fps, batched_knn
from .model import ModelSpec


@dataclass
class EncoderGroups:
    """Sampling/grouping indices; they depend on the input only, so they can be cached."""

    rel1: np.ndarray  # (B, m1, k1, 3) group coordinates relative to centroid
    c1: np.ndarray  # (B, m1, 3) stage-one centroids
    g2: np.ndarray  # (B, m2, k2) stage-two groups, indices into the m1 centroids

    def take(self, idx) -> "EncoderGroups":
        return EncoderGroups(self.rel1[idx], self.c1[idx], self.g2[idx])


def group_patches(spec: ModelSpec, x: np.ndarray) -> EncoderGroups:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    b = len(x)
    rows = np.arange(b)[:, None]
    i1 = batched_fps(x, spec.sa1_npoint)
    c1 = x[rows, i1]
    g1 = batched_knn(x, c1, spec.sa1_k)
    rel1 = x[rows[:, :, None], g1] - c1[:, :, None, :]
    i2 = batched_fps(c1, spec.sa2_npoint)
    c2 = c1[rows, i2]
    g2 = batched_knn(c1, c2, spec.sa2_k)
    return EncoderGroups(rel1, c1, g2)


def _dense(x, p, name):
    return x @ p[name + ".W"] + p[name + ".b"]


def _pool(h, axis):
    """Max over ``axis`` plus the argmax, kept for routing gradients."""
    idx = np.argmax(h, axis=axis)
    return np.take_along_axis(h, np.expand_dims(idx, axis), axis).squeeze(axis), idx


def _unpool(grad, idx, shape, axis):
    out = np.zeros(shape)
    np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(grad, axis), axis)
    return out


def _wgrad(x, dy):
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1]), dy.reshape(-1, dy.shape[-1]).sum(0)


def encode_forward(p: dict, groups: EncoderGroups):
    b, m2, k2 = groups.g2.shape
    rows = np.arange(b)[:, None, None]
    a0 = np.maximum(_dense(groups.rel1, p, "sa1_0"), 0.0)
    a1 = np.maximum(_dense(a0, p, "sa1_1"), 0.0)
    f1, arg1 = _pool(a1, 2)  # (B, m1, C1)
    in2 = np.concatenate([f1[rows, groups.g2], groups.c1[rows, groups.g2]], axis=3)
    h0 = np.maximum(_dense(in2, p, "sa2_0"), 0.0)
    h1 = np.maximum(_dense(h0, p, "sa2_1"), 0.0)
    f2, arg2 = _pool(h1, 2)  # (B, m2, C2)
    g, argg = _pool(f2, 1)  # (B, C2)
    z = _dense(g, p, "enc_fc")
    cache = (groups, a0, a1, arg1, in2, h0, h1, arg2, f2, argg, g)
    return z, cache


def encode_backward(p: dict, cache, dz: np.ndarray, grads: dict) -> None:
    groups, a0, a1, arg1, in2, h0, h1, arg2, f2, argg, g = cache
    b, m2, k2 = groups.g2.shape
    m1 = groups.c1.shape[1]
    grads["enc_fc.W"], grads["enc_fc.b"] = _wgrad(g, dz)
    dg = dz @ p["enc_fc.W"].T
    df2 = _unpool(dg, argg, f2.shape, 1)
    dh1 = _unpool(df2, arg2, h1.shape, 2) * (h1 > 0)
    grads["sa2_1.W"], grads["sa2_1.b"] = _wgrad(h0, dh1)
    dh0 = (dh1 @ p["sa2_1.W"].T) * (h0 > 0)
    grads["sa2_0.W"], grads["sa2_0.b"] = _wgrad(in2, dh0)
    din2 = dh0 @ p["sa2_0.W"][: a1.shape[-1]].T  # feature part only
    c1w = a1.shape[-1]
    flat = (np.arange(b)[:, None, None] * m1 + groups.g2).ravel()
    df1 = np.zeros((b * m1, c1w))
    np.add.at(df1, flat, din2.reshape(-1, c1w))
    df1 = df1.reshape(b, m1, c1w)
    da1 = _unpool(df1, arg1, a1.shape, 2) * (a1 > 0)
    grads["sa1_1.W"], grads["sa1_1.b"] = _wgrad(a0, da1)
    da0 = (da1 @ p["sa1_1.W"].T) * (a0 > 0)
    grads["sa1_0.W"], grads["sa1_0.b"] = _wgrad(groups.rel1, da0)


def decode_forward(p: dict, z: np.ndarray, spec: ModelSpec):
    b = len(z)
    n = spec.n_points
    d0 = np.maximum(_dense(z, p, "dec_fc0"), 0.0)
    coarse = _dense(d0, p, "dec_fc1").reshape(b, spec.n_coarse, 3)
    sel = batched_fps(coarse, n)
    q = coarse[np.arange(b)[:, None], sel]
    cond = _dense(z, p, "dec_cond")
    rin = np.concatenate([q, np.broadcast_to(cond[:, None, :], (b, n, cond.shape[1]))], axis=2)
    r0 = np.maximum(_dense(rin, p, "ref_0"), 0.0)
    y = q + _dense(r0, p, "ref_1")
    cache = (z, d0, sel, rin, r0)
    return y, cache


def decode_backward(p: dict, cache, dy: np.ndarray, spec: ModelSpec, grads: dict) -> np.ndarray:
    """Accumulate decoder gradients into ``grads`` and return d(loss)/d(latent)."""
    z, d0, sel, rin, r0 = cache
    b = len(z)
    grads["ref_1.W"], grads["ref_1.b"] = _wgrad(r0, dy)
    dr0 = (dy @ p["ref_1.W"].T) * (r0 > 0)
    grads["ref_0.W"], grads["ref_0.b"] = _wgrad(rin, dr0)
    drin = dr0 @ p["ref_0.W"].T
    dq = dy + drin[:, :, :3]
    dcond = drin[:, :, 3:].sum(axis=1)
    grads["dec_cond.W"], grads["dec_cond.b"] = _wgrad(z, dcond)
    dz = dcond @ p["dec_cond.W"].T
    dcoarse = np.zeros((b, spec.n_coarse, 3))
    dcoarse[np.arange(b)[:, None], sel] = dq
    dflat = dcoarse.reshape(b, -1)
    grads["dec_fc1.W"], grads["dec_fc1.b"] = _wgrad(d0, dflat)
    dd0 = (dflat @ p["dec_fc1.W"].T) * (d0 > 0)
    grads["dec_fc0.W"], grads["dec_fc0.b"] = _wgrad(z, dd0)
    dz = dz + dd0 @ p["dec_fc0.W"].T
    return dz


def forward(p: dict, groups: EncoderGroups, spec: ModelSpec):
    z, ecache = encode_forward(p, groups)
    y, dcache = decode_forward(p, z, spec)
    return y, (ecache, dcache)


def backward(p: dict, cache, dy: np.ndarray, spec: ModelSpec) -> dict:
    ecache, dcache = cache
    grads: dict = {}
    dz = decode_backward(p, dcache, dy, spec, grads)
    encode_backward(p, ecache, dz, grads)
    return grads
