"""Synthetic training pairs: phantom fingerprints, random smooth TPS
distortion fields, conjugate-pair synthesis and pose augmentation.

A pair is built by forward-warping a base print through a random field D:
the conjugate image satisfies I'(x+Dx, y+Dy) = I(x, y), the forward field
F equals D on the source grid and the reverse field F' carries -D scattered
to the displaced positions. Everything is deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagecore import (
    DisplacementField,
    read_dfld,
    read_mask_pgm,
    read_pgm,
    scatter_field,
    warp_forward,
    write_dfld,
    write_mask_pgm,
    write_pgm,
)
from .tps import tps_fit_scalar, tps_eval_scalar

BACKGROUND_GRAY = 240.0
FIELD_MAGNITUDE_LIMIT = 30.0


@dataclass
class TrainSample:
    """One synthesized registration pair with ground-truth fields."""

    image: np.ndarray
    conjugate: np.ndarray
    field_fwd: DisplacementField
    field_rev: DisplacementField
    mask: np.ndarray
    mask_conj: np.ndarray


# ---------------------------------------------------------------------------
# Phantom fingerprints


def phantom_fingerprint(width: int, height: int, seed: int, period: float | None = None,
                        n_vortices: int | None = None):
    """Curved-ridge phantom image with an elliptical foreground.

    Ridges follow elliptical rings around a randomly placed core with a
    smooth domain perturbation; half-index phase vortices produce ridge
    endings/bifurcations so the built-in minutiae extractor has real
    features to find. Returns (image, mask) with dark ridges on a light
    background.
    """
    rng = np.random.default_rng(seed)
    if period is None:
        period = float(rng.uniform(8.0, 12.0))
    if n_vortices is None:
        n_vortices = max(3, (width * height) // 1400)

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    cx = width * rng.uniform(0.35, 0.65)
    cy = height * rng.uniform(0.35, 0.65)

    # elliptical ring metric; axis ratio breaks rotational symmetry
    ax = rng.uniform(0.8, 0.95)
    bx = rng.uniform(1.05, 1.25)
    tilt = rng.uniform(0.0, np.pi)
    u = (xs - cx) * np.cos(tilt) + (ys - cy) * np.sin(tilt)
    v = -(xs - cx) * np.sin(tilt) + (ys - cy) * np.cos(tilt)
    rho = np.hypot(u / ax, v / bx)

    # smooth low-frequency perturbation of the ring phase
    wx = rng.uniform(0.5, 1.5) * 2.0 * np.pi / max(width, height)
    wy = rng.uniform(0.5, 1.5) * 2.0 * np.pi / max(width, height)
    rho = rho + rng.uniform(0.5, 2.0) * np.sin(wx * xs + rng.uniform(0, 2 * np.pi)) \
              + rng.uniform(0.5, 2.0) * np.sin(wy * ys + rng.uniform(0, 2 * np.pi))

    phase = (2.0 * np.pi / period) * rho
    for _ in range(n_vortices):
        vx_ = rng.uniform(0.15 * width, 0.85 * width)
        vy_ = rng.uniform(0.15 * height, 0.85 * height)
        phase += 0.5 * float(rng.choice((-1.0, 1.0))) * np.arctan2(ys - vy_, xs - vx_)

    # soft elliptical footprint centered on the frame
    fx = (xs - (width - 1) / 2.0) / (0.46 * width)
    fy = (ys - (height - 1) / 2.0) / (0.46 * height)
    footprint = fx * fx + fy * fy
    window = 1.0 / (1.0 + np.exp(12.0 * (footprint - 1.0)))

    img = BACKGROUND_GRAY - window * 180.0 * (0.5 + 0.5 * np.cos(phase))
    img += rng.normal(0.0, 3.0, size=img.shape)
    mask = footprint <= 1.0
    return np.clip(img, 0.0, 255.0), mask


# ---------------------------------------------------------------------------
# Random smooth fields


def random_tps_field(width: int, height: int, magnitude: float, grid: int = 4,
                     seed: int = 0) -> DisplacementField:
    """Dense smooth field from a grid of TPS control points with clipped
    Gaussian target offsets (std = magnitude/2). The rasterized components
    are post-clipped so max|dx|, max|dy| <= magnitude."""
    if magnitude > FIELD_MAGNITUDE_LIMIT:
        raise ValueError(f"magnitude must be <= {FIELD_MAGNITUDE_LIMIT} px")
    if grid < 3:
        raise ValueError("control grid must be at least 3x3")
    if magnitude == 0.0:
        return DisplacementField.zeros(width, height)

    rng = np.random.default_rng(seed)
    gx = np.linspace(0.0, width - 1.0, grid)
    gy = np.linspace(0.0, height - 1.0, grid)
    pts = np.column_stack([np.repeat(gx, grid), np.tile(gy, grid)])
    offsets = np.clip(rng.normal(0.0, magnitude / 2.0, size=(grid * grid, 2)),
                      -magnitude, magnitude)

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    query = np.column_stack([xs.ravel(), ys.ravel()])
    comps = []
    for axis in range(2):
        model = tps_fit_scalar(pts, offsets[:, axis], reg=0.0)
        comps.append(tps_eval_scalar(model, query).reshape(height, width))
    dx = np.clip(comps[0], -magnitude, magnitude)
    dy = np.clip(comps[1], -magnitude, magnitude)
    return DisplacementField(dx, dy)


# ---------------------------------------------------------------------------
# Pair synthesis


def synthesize_pair(img: np.ndarray, field: DisplacementField, mask: np.ndarray,
                    fill: float = BACKGROUND_GRAY) -> TrainSample:
    """Forward-warp ``img`` through ``field`` into its conjugate.

    The forward field is the input field itself; the reverse field is the
    negated field rasterized by forward scatter onto the conjugate grid."""
    if np.abs(field.dx).max(initial=0.0) > FIELD_MAGNITUDE_LIMIT + 1e-9 or \
       np.abs(field.dy).max(initial=0.0) > FIELD_MAGNITUDE_LIMIT + 1e-9:
        raise ValueError(f"field magnitude exceeds {FIELD_MAGNITUDE_LIMIT} px")
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)

    conj = warp_forward(img, field, fill=fill)
    mask_conj = warp_forward(mask.astype(np.float64), field, fill=0.0) > 0.5
    rev = scatter_field(np.stack([-field.dx, -field.dy], axis=-1), field, fill=0.0)
    return TrainSample(
        image=img.copy(),
        conjugate=conj,
        field_fwd=field.copy(),
        field_rev=DisplacementField(rev[..., 0], rev[..., 1], field.scale),
        mask=mask.copy(),
        mask_conj=mask_conj,
    )


# ---------------------------------------------------------------------------
# Augmentation

AUGMENT_OPS = ("flip", "rot90", "rot180", "rot270", "swap")


def _flip_field(f: DisplacementField) -> DisplacementField:
    return DisplacementField(-f.dx[:, ::-1], f.dy[:, ::-1], f.scale)


def _rot90_field(f: DisplacementField) -> DisplacementField:
    # grid rotation with (dx, dy) -> (-dy, dx)
    return DisplacementField(-np.rot90(f.dy, -1), np.rot90(f.dx, -1), f.scale)


def augment(sample: TrainSample, op: str) -> TrainSample:
    """Geometric/role augmentation transforming images, masks and both
    fields consistently; flip is a mirror about the vertical axis, rotations
    are multiples of 90 degrees, swap exchanges the pair roles."""
    if op == "swap":
        return TrainSample(
            image=sample.conjugate.copy(),
            conjugate=sample.image.copy(),
            field_fwd=sample.field_rev.copy(),
            field_rev=sample.field_fwd.copy(),
            mask=sample.mask_conj.copy(),
            mask_conj=sample.mask.copy(),
        )
    if op == "flip":
        geo = lambda a: np.ascontiguousarray(a[:, ::-1])
        fld = _flip_field
    elif op in ("rot90", "rot180", "rot270"):
        turns = {"rot90": 1, "rot180": 2, "rot270": 3}[op]
        geo = lambda a: np.ascontiguousarray(np.rot90(a, -turns))

        def fld(f: DisplacementField) -> DisplacementField:
            for _ in range(turns):
                f = _rot90_field(f)
            return f
    else:
        raise ValueError(f"unsupported augmentation op {op!r}; choose from {AUGMENT_OPS}")

    return TrainSample(
        image=geo(sample.image),
        conjugate=geo(sample.conjugate),
        field_fwd=fld(sample.field_fwd),
        field_rev=fld(sample.field_rev),
        mask=geo(sample.mask),
        mask_conj=geo(sample.mask_conj),
    )


# ---------------------------------------------------------------------------
# Dataset on disk


def save_sample(directory, sample: TrainSample) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_pgm(d / "I.pgm", sample.image)
    write_pgm(d / "Iprime.pgm", sample.conjugate)
    write_dfld(d / "F.dfld", sample.field_fwd)
    write_dfld(d / "Fprime.dfld", sample.field_rev)
    write_mask_pgm(d / "mask.pgm", sample.mask)


def load_sample(directory) -> TrainSample:
    d = Path(directory)
    img = read_pgm(d / "I.pgm")
    conj = read_pgm(d / "Iprime.pgm")
    fwd = read_dfld(d / "F.dfld")
    rev = read_dfld(d / "Fprime.dfld")
    mask = read_mask_pgm(d / "mask.pgm")
    mask_conj = warp_forward(mask.astype(np.float64), fwd, fill=0.0) > 0.5
    return TrainSample(img, conj, fwd, rev, mask, mask_conj)


def generate_dataset(out_dir, count: int, size: int = 64, magnitude: float = 12.0,
                     seed: int = 0, grid: int = 4) -> list[Path]:
    """Write ``count`` synthetic pairs under ``out_dir`` plus a manifest."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(count):
        sid = f"{i:05d}"
        img, mask = phantom_fingerprint(size, size, seed=hash_seed(seed, i, 0))
        field = random_tps_field(size, size, magnitude, grid=grid, seed=hash_seed(seed, i, 1))
        save_sample(root / sid, synthesize_pair(img, field, mask))
        ids.append(sid)
    manifest = {
        "count": count,
        "size": size,
        "magnitude": magnitude,
        "seed": seed,
        "grid": grid,
        "ids": ids,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return [root / sid for sid in ids]


def load_dataset(root) -> list[TrainSample]:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    return [load_sample(root / sid) for sid in manifest["ids"]]


def hash_seed(*parts: int) -> int:
    """Stable 63-bit mix of integers for per-sample substream seeding."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h ^= (p + 0x9E3779B97F4A7C15 + (h << 6) + (h >> 2)) & 0xFFFFFFFFFFFFFFFF
    return h & 0x7FFFFFFFFFFFFFFF
