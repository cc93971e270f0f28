"""Raster containers, interpolation, warping, resizing and I/O.

Images are 2-D float64 arrays in gray levels (0..255), masks are 2-D bool
arrays, displacement fields carry per-pixel (dx, dy) offsets in
full-resolution pixel units regardless of their own grid resolution.

Border policy, used consistently package-wide: replicate padding for
filters, clamp-to-border for point sampling, explicit fill value for warps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

MAX_GRAY = 255.0

DFLD_MAGIC = b"DFLD"
PHAS_MAGIC = b"PHAS"


@dataclass
class DisplacementField:
    """Per-cell 2-vector (dx, dy) mapping input toward reference.

    ``scale`` is the ratio of this grid to full image resolution (1.0 for
    pixel-dense fields, 0.125 for network-resolution fields). Offsets are
    always expressed in full-resolution pixels.
    """

    dx: np.ndarray
    dy: np.ndarray
    scale: float = 1.0

    def __post_init__(self) -> None:
        self.dx = np.asarray(self.dx, dtype=np.float64)
        self.dy = np.asarray(self.dy, dtype=np.float64)
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise ValueError("dx and dy must be 2-D arrays of identical shape")
        if not (np.isfinite(self.dx).all() and np.isfinite(self.dy).all()):
            raise ValueError("displacement field contains non-finite values")

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def width(self) -> int:
        return self.dx.shape[1]

    def copy(self) -> "DisplacementField":
        return DisplacementField(self.dx.copy(), self.dy.copy(), self.scale)

    def negated(self) -> "DisplacementField":
        return DisplacementField(-self.dx, -self.dy, self.scale)

    @staticmethod
    def zeros(width: int, height: int, scale: float = 1.0) -> "DisplacementField":
        z = np.zeros((height, width), dtype=np.float64)
        return DisplacementField(z, z.copy(), scale)


# ---------------------------------------------------------------------------
# File I/O


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM file into a float64 array of gray levels."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")

    # Header: magic, width, height, maxval; '#' comments allowed between tokens.
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval <= 0 or maxval > 255:
        raise ValueError(f"{path}: unsupported PGM maxval {maxval}")
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    img = data.reshape(height, width).astype(np.float64)
    if maxval != 255:
        img *= 255.0 / maxval
    return img


def write_pgm(path, img: np.ndarray) -> None:
    """Write a float image as binary PGM, clipping and rounding to 8 bits."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_image(path) -> np.ndarray:
    """Read PGM natively; grayscale PNG via Pillow as an optional extra."""
    p = Path(path)
    if p.suffix.lower() in (".pgm",):
        return read_pgm(p)
    if p.suffix.lower() == ".png":
        from PIL import Image as PILImage

        with PILImage.open(p) as im:
            return np.asarray(im.convert("L"), dtype=np.float64)
    raise ValueError(f"{path}: unsupported image format (use .pgm or .png)")


def write_mask_pgm(path, mask: np.ndarray) -> None:
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255.0, 0.0))


def read_mask_pgm(path) -> np.ndarray:
    return read_pgm(path) >= 128.0


def write_dfld(path, field: DisplacementField) -> None:
    """Binary field format: magic 'DFLD', u32 w, u32 h, f32 scale, then
    w*h interleaved (dx, dy) f32 pairs in row-major cell order."""
    h, w = field.dx.shape
    header = DFLD_MAGIC + struct.pack("<IIf", w, h, field.scale)
    inter = np.empty((h, w, 2), dtype="<f4")
    inter[..., 0] = field.dx
    inter[..., 1] = field.dy
    Path(path).write_bytes(header + inter.tobytes())


def read_dfld(path) -> DisplacementField:
    raw = Path(path).read_bytes()
    if raw[:4] != DFLD_MAGIC:
        raise ValueError(f"{path}: bad magic, not a DFLD file")
    w, h, scale = struct.unpack("<IIf", raw[4:16])
    inter = np.frombuffer(raw, dtype="<f4", count=w * h * 2, offset=16)
    inter = inter.reshape(h, w, 2).astype(np.float64)
    return DisplacementField(inter[..., 0], inter[..., 1], float(scale))


def write_phas(path, phi: np.ndarray, scale: float = 1.0) -> None:
    """Single-channel binary raster with magic 'PHAS' (phase map export)."""
    phi = np.asarray(phi, dtype=np.float64)
    h, w = phi.shape
    header = PHAS_MAGIC + struct.pack("<IIf", w, h, scale)
    Path(path).write_bytes(header + phi.astype("<f4").tobytes())


def read_phas(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != PHAS_MAGIC:
        raise ValueError(f"{path}: bad magic, not a PHAS file")
    w, h, _scale = struct.unpack("<IIf", raw[4:16])
    data = np.frombuffer(raw, dtype="<f4", count=w * h, offset=16)
    return data.reshape(h, w).astype(np.float64)


# ---------------------------------------------------------------------------
# Sampling and warping


def bilinear_sample(img: np.ndarray, x, y, mode: str = "clamp"):
    """Bilinear interpolation of ``img`` at (x, y); exact on the integer grid.

    Coordinates outside [0, w-1] x [0, h-1] are clamped to the border by
    default; ``mode='raise'`` rejects them instead.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mode == "raise":
        if np.any(x < 0) or np.any(x > w - 1) or np.any(y < 0) or np.any(y > h - 1):
            raise ValueError("sample coordinate out of bounds")
    elif mode != "clamp":
        raise ValueError(f"unknown sampling mode {mode!r}")

    xc = np.clip(x, 0.0, w - 1.0)
    yc = np.clip(y, 0.0, h - 1.0)
    x0 = np.clip(np.floor(xc).astype(np.int64), 0, w - 2) if w > 1 else np.zeros_like(xc, dtype=np.int64)
    y0 = np.clip(np.floor(yc).astype(np.int64), 0, h - 2) if h > 1 else np.zeros_like(yc, dtype=np.int64)
    fx = xc - x0
    fy = yc - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)

    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    out = (
        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
        + fy * ((1.0 - fx) * v10 + fx * v11)
    )
    if np.isscalar(x) or out.ndim == 0:
        return float(out)
    return out


def _require_full_res(img: np.ndarray, field: DisplacementField) -> None:
    if field.dx.shape != img.shape:
        raise ValueError(
            f"field {field.dx.shape} does not match image {img.shape}; "
            "warping requires a full-resolution field"
        )


def warp_backward(img: np.ndarray, field: DisplacementField, fill: float = 0.0) -> np.ndarray:
    """Inverse-gather warp: output(x, y) = img(x - dx(x,y), y - dy(x,y)).

    The field maps input toward reference, so gathering with it aligns the
    input onto the reference grid. Reads outside the source produce ``fill``.
    """
    img = np.asarray(img, dtype=np.float64)
    _require_full_res(img, field)
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    gx = xs - field.dx
    gy = ys - field.dy
    inside = (gx >= 0.0) & (gx <= w - 1.0) & (gy >= 0.0) & (gy <= h - 1.0)
    if field.dx.any() or field.dy.any():
        sampled = bilinear_sample(img, gx, gy, mode="clamp")
        return np.where(inside, sampled, fill)
    return img.copy()  # zero field: bit-exact identity


def warp_forward(img: np.ndarray, field: DisplacementField, fill: float = 0.0) -> np.ndarray:
    """Scatter warp: each source pixel splats to (x + dx, y + dy).

    Sub-pixel targets are resolved by bilinear splatting. Cells left empty
    get one pass of nearest-valid-neighbor fill (8-neighborhood); anything
    still uncovered gets ``fill``.
    """
    values, weight = _scatter_splat(np.asarray(img, dtype=np.float64)[..., None], field)
    return _resolve_scatter(values[..., 0], weight, fill)


def scatter_field(field_values: np.ndarray, field: DisplacementField, fill: float = 0.0) -> np.ndarray:
    """Forward-scatter arbitrary per-pixel channels through ``field``.

    ``field_values`` is (h, w, c); used to rasterize reverse displacement
    fields defined at scattered target positions."""
    values, weight = _scatter_splat(np.asarray(field_values, dtype=np.float64), field)
    out = np.empty_like(values)
    for c in range(values.shape[2]):
        out[..., c] = _resolve_scatter(values[..., c], weight, fill)
    return out


def _scatter_splat(channels: np.ndarray, field: DisplacementField):
    h, w, nc = channels.shape
    if field.dx.shape != (h, w):
        raise ValueError(f"field {field.dx.shape} does not match raster {(h, w)}")
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = (xs + field.dx).ravel()
    ty = (ys + field.dy).ravel()

    x0 = np.floor(tx).astype(np.int64)
    y0 = np.floor(ty).astype(np.int64)
    fx = tx - x0
    fy = ty - y0

    acc = np.zeros((h, w, nc), dtype=np.float64)
    wacc = np.zeros((h, w), dtype=np.float64)
    flat = channels.reshape(-1, nc)
    for ox, oy, wgt in (
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ):
        cx = x0 + ox
        cy = y0 + oy
        ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h) & (wgt > 0.0)
        idx = cy[ok] * w + cx[ok]
        np.add.at(wacc.ravel(), idx, wgt[ok])
        np.add.at(acc.reshape(-1, nc), idx, flat[ok] * wgt[ok, None])
    return acc, wacc


def _resolve_scatter(values: np.ndarray, weight: np.ndarray, fill: float) -> np.ndarray:
    covered = weight > 1e-12
    out = np.full(values.shape, fill, dtype=np.float64)
    out[covered] = values[covered] / weight[covered]
    if covered.all():
        return out
    # One dilation pass: copy from the nearest covered pixel within the
    # 8-neighborhood; farther holes stay at the fill value.
    dist, (iy, ix) = ndimage.distance_transform_edt(~covered, return_indices=True)
    fillable = ~covered & (dist <= 1.5)
    out[fillable] = out[iy[fillable], ix[fillable]]
    return out


# ---------------------------------------------------------------------------
# Resizing


@lru_cache(maxsize=256)
def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """1-D bilinear resampling matrix (n_out x n_in), half-pixel-centered
    mapping with border clamp; reduces to identity when n_out == n_in."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 2)
    frac = src - i0
    m[np.arange(n_out), i0] += 1.0 - frac
    m[np.arange(n_out), i0 + 1] += frac
    return m


def resize_bilinear(arr: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Bilinear resampling of a 2-D grid to (target_h, target_w)."""
    arr = np.asarray(arr, dtype=np.float64)
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be >= 1")
    h, w = arr.shape
    if (h, w) == (target_h, target_w):
        return arr.copy()
    ry = _resize_matrix(h, target_h)
    rx = _resize_matrix(w, target_w)
    return ry @ arr @ rx.T


def resize_field(field: DisplacementField, target_w: int, target_h: int,
                 scale: float | None = None) -> DisplacementField:
    """Resample a displacement field; values are NOT rescaled since they are
    already expressed in full-resolution pixel units."""
    return DisplacementField(
        resize_bilinear(field.dx, target_w, target_h),
        resize_bilinear(field.dy, target_w, target_h),
        field.scale if scale is None else scale,
    )


def resize_mask(mask: np.ndarray, target_w: int, target_h: int, thresh: float = 0.5) -> np.ndarray:
    return resize_bilinear(np.asarray(mask, dtype=np.float64), target_w, target_h) >= thresh


# ---------------------------------------------------------------------------
# Filtering


def laplacian(grid: np.ndarray) -> np.ndarray:
    """Convolution with [[0,1,0],[1,-4,1],[0,1,0]], replicate-padded border."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 3 or grid.shape[1] < 3:
        raise ValueError("laplacian requires a grid of at least 3x3")
    p = np.pad(grid, 1, mode="edge")
    return (
        p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * grid
    )
