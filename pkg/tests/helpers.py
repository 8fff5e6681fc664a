"""Adapters and fixture builders shared across test modules."""

from __future__ import annotations

import os

import numpy as np

from cev2 import CEParams, SAFMParams, SEParams
from cev2.ppm import Raster, write_ppm


def ce_weights(params: CEParams) -> dict[str, np.ndarray]:
    """Flatten CEParams into the (C,C) matrices + (C,) biases ce_ref takes."""
    out = {
        "w1": params.mlp1_w.data[:, :, 0, 0].copy(),
        "b1": params.mlp1_b.data.reshape(-1).copy(),
        "w2": params.mlp2_w.data[:, :, 0, 0].copy(),
        "b2": params.mlp2_b.data.reshape(-1).copy(),
        "wo": params.out_w.data[:, :, 0, 0].copy(),
        "bo": params.out_b.data.reshape(-1).copy(),
        "shared": params.shared_mlp,
    }
    if not params.shared_mlp:
        out["w1m"] = params.mlp1m_w.data[:, :, 0, 0].copy()
        out["b1m"] = params.mlp1m_b.data.reshape(-1).copy()
        out["w2m"] = params.mlp2m_w.data[:, :, 0, 0].copy()
        out["b2m"] = params.mlp2m_b.data.reshape(-1).copy()
    return out


def se_weights(params: SEParams) -> dict[str, np.ndarray]:
    return {
        "wr": params.reduce_w.data[:, :, 0, 0].copy(),
        "br": params.reduce_b.data.reshape(-1).copy(),
        "we": params.expand_w.data[:, :, 0, 0].copy(),
        "be": params.expand_b.data.reshape(-1).copy(),
    }


def safm_weights(params: SAFMParams):
    """Per-branch weight dicts + fusion arrays in safm_ref's layout."""
    branches = []
    for br in params.branches:
        if br is None:
            branches.append(None)
        elif params.mode == "depthwise-separable":
            branches.append({
                "dw": br["dw"][0].data.copy(),
                "dw_b": br["dw"][1].data.reshape(-1).copy(),
                "pw": br["pw"][0].data.copy(),
                "pw_b": br["pw"][1].data.reshape(-1).copy(),
            })
        else:
            branches.append({
                "std": br["std"][0].data.copy(),
                "std_b": br["std"][1].data.reshape(-1).copy(),
            })
    return branches, params.fuse_w.data.copy(), params.fuse_b.data.reshape(-1).copy()


def bn_arrays(convbn, prefix: str) -> dict[str, np.ndarray]:
    """One _ConvBN's batch-norm vectors under bn_ref-style keys."""
    return {
        prefix + "_gamma": convbn.gamma.data.reshape(-1).copy(),
        prefix + "_beta": convbn.beta.data.reshape(-1).copy(),
        prefix + "_rm": convbn.rm.data.reshape(-1).copy(),
        prefix + "_rv": convbn.rv.data.reshape(-1).copy(),
    }


CLASS_COLORS = ((200, 40, 40), (40, 200, 40), (40, 40, 200), (200, 200, 40),
                (200, 40, 200), (40, 200, 200), (120, 200, 70), (70, 120, 200))


def make_solid_dataset(root: str, n_classes: int = 4, per_class: int = 10,
                       size: int = 64, noise: int = 12, seed: int = 5) -> None:
    """Directory-per-class PPM fixture: solid colors plus mild uniform noise,
    linearly separable by color."""
    rng = np.random.default_rng(seed)
    for ci in range(n_classes):
        cdir = os.path.join(root, f"class{ci:02d}")
        os.makedirs(cdir, exist_ok=True)
        color = np.array(CLASS_COLORS[ci % len(CLASS_COLORS)], dtype=np.float64)
        for k in range(per_class):
            base = np.tile(color, (size, size, 1))
            jitter = rng.integers(-noise, noise + 1, size=(size, size, 3))
            img = np.clip(base + jitter, 0, 255).astype(np.uint8)
            write_ppm(os.path.join(cdir, f"img{k:03d}.ppm"), Raster(img))


def solid_gray(size: int, value: int) -> Raster:
    return Raster(np.full((size, size, 3), value, dtype=np.uint8))
