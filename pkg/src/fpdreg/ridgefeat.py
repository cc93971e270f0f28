"""Ridge-level features: orientation field, period map, segmentation,
complex Gabor enhancement with phase, and the masked phase difference.

Orientation is estimated from averaged squared gradients (classical
coherence method), period from the autocorrelation of the intensity
signature projected onto the ridge normal, segmentation from block
variance plus gradient coherence. All block quantities are sampled on
8x8 pixel blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imagecore import DisplacementField, write_phas  # noqa: F401  (re-export for callers)

BLOCK = 8
PERIOD_MIN = 3.0
PERIOD_MAX = 25.0

# Gabor defaults: sigma tied to the local ridge period, support ~4 sigma.
SIGMA_PER_PERIOD = 0.5
KERNEL_SIGMA_SPAN = 4.0

# Quantization steps for the per-block kernel cache.
_THETA_STEP = math.pi / 90.0  # 2 degrees
_PERIOD_STEP = 0.25

_MIN_BLOCK_ENERGY = 1.0  # squared gray levels per pixel; below this a block is flat


@dataclass
class OrientationField:
    """Block-sampled ridge direction in radians, values in [0, pi)."""

    theta: np.ndarray
    valid: np.ndarray
    block: int = BLOCK

    @property
    def rows(self) -> int:
        return self.theta.shape[0]

    @property
    def cols(self) -> int:
        return self.theta.shape[1]


@dataclass
class PeriodMap:
    """Block-sampled ridge period in pixels, clamped to [3, 25] where valid."""

    period: np.ndarray
    valid: np.ndarray
    block: int = BLOCK


@dataclass
class GaborKernel:
    real: np.ndarray
    imag: np.ndarray
    theta: float
    f0: float
    sigma_x: float
    sigma_y: float
    size: int


@dataclass
class PreprocessedPair:
    """Masked enhancements and phase difference of a coarsely aligned pair."""

    enh_input: np.ndarray
    enh_ref: np.ndarray
    phase_diff: np.ndarray
    mask_input: np.ndarray
    mask_ref: np.ndarray
    phase_input: np.ndarray = field(repr=False, default=None)
    phase_ref: np.ndarray = field(repr=False, default=None)
    overlap_empty: bool = False


def wrap_phase(x: np.ndarray) -> np.ndarray:
    """Wrap radians into (-pi, pi]."""
    w = np.mod(np.asarray(x, dtype=np.float64), 2.0 * np.pi)
    if np.ndim(w) == 0:
        return float(w - 2.0 * np.pi) if w > np.pi else float(w)
    w[w > np.pi] -= 2.0 * np.pi
    return w


# ---------------------------------------------------------------------------
# Block statistics


def _block_reduce(arr: np.ndarray, block: int) -> np.ndarray:
    """Sum over non-overlapping block x block tiles (trailing remainder cropped)."""
    h, w = arr.shape
    rows, cols = h // block, w // block
    view = arr[: rows * block, : cols * block].reshape(rows, block, cols, block)
    return view.sum(axis=(1, 3))


def _gradient_moments(img: np.ndarray, block: int):
    gy, gx = np.gradient(img)
    gxx = _block_reduce(gx * gx, block)
    gyy = _block_reduce(gy * gy, block)
    gxy = _block_reduce(gx * gy, block)
    return gxx, gyy, gxy


def _smooth_doubled_angles(theta: np.ndarray, valid: np.ndarray):
    """3x3 vector averaging of doubled angles, then grow values into invalid
    blocks from their valid neighbors until no progress is possible."""
    c = np.where(valid, np.cos(2.0 * theta), 0.0)
    s = np.where(valid, np.sin(2.0 * theta), 0.0)
    k = np.ones((3, 3))
    cnt = ndimage.convolve(valid.astype(np.float64), k, mode="constant")
    cs = ndimage.convolve(c, k, mode="constant")
    ss = ndimage.convolve(s, k, mode="constant")
    smoothed = np.where(cnt > 0, 0.5 * np.arctan2(ss, cs), 0.0)
    theta_out = np.where(valid, np.mod(smoothed, np.pi), 0.0)
    defined = valid.copy()
    # neighbor fill for undefined blocks
    while True:
        cnt = ndimage.convolve(defined.astype(np.float64), k, mode="constant")
        growable = ~defined & (cnt > 0)
        if not growable.any():
            break
        c = np.where(defined, np.cos(2.0 * theta_out), 0.0)
        s = np.where(defined, np.sin(2.0 * theta_out), 0.0)
        cs = ndimage.convolve(c, k, mode="constant")
        ss = ndimage.convolve(s, k, mode="constant")
        theta_out[growable] = np.mod(0.5 * np.arctan2(ss[growable], cs[growable]), np.pi)
        defined |= growable
    return theta_out, defined


def estimate_orientation(img: np.ndarray, block: int = BLOCK) -> OrientationField:
    """Per-block dominant ridge direction (perpendicular to the dominant
    gradient), reported modulo pi. Zero-gradient blocks come back invalid
    unless they could be filled from defined neighbors."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] < 32 or img.shape[1] < 32:
        raise ValueError("orientation estimation requires an image of at least 32x32")
    gxx, gyy, gxy = _gradient_moments(img, block)
    energy = (gxx + gyy) / float(block * block)
    measured = energy > max(_MIN_BLOCK_ENERGY, 0.05 * float(energy.mean()))

    # Doubled-angle of the gradient direction; ridges run perpendicular.
    theta = 0.5 * np.arctan2(2.0 * gxy, gxx - gyy) + 0.5 * np.pi
    theta = np.mod(theta, np.pi)
    theta, defined = _smooth_doubled_angles(theta, measured)
    return OrientationField(theta=theta, valid=defined, block=block)


def orientation_coherence(img: np.ndarray, block: int = BLOCK) -> np.ndarray:
    """Anisotropy measure in [0, 1] per block (1 = perfectly oriented)."""
    gxx, gyy, gxy = _gradient_moments(np.asarray(img, dtype=np.float64), block)
    num = np.hypot(gxx - gyy, 2.0 * gxy)
    den = gxx + gyy
    return np.divide(num, den, out=np.zeros_like(num), where=den > 1e-12)


# ---------------------------------------------------------------------------
# Period estimation


_PERIOD_WINDOW_HALF = 24  # 49x49 signature window


def _block_period(img: np.ndarray, cy: float, cx: float, theta: float):
    """Dominant period of the projection onto the ridge normal, or None."""
    h, w = img.shape
    half = _PERIOD_WINDOW_HALF
    y0, y1 = max(0, int(cy) - half), min(h, int(cy) + half + 1)
    x0, x1 = max(0, int(cx) - half), min(w, int(cx) + half + 1)
    patch = img[y0:y1, x0:x1]
    if patch.size < 64:
        return None
    ys, xs = np.mgrid[y0:y1, x0:x1]
    nx, ny = math.cos(theta + 0.5 * math.pi), math.sin(theta + 0.5 * math.pi)
    t = (xs - cx) * nx + (ys - cy) * ny
    bins = np.rint(t).astype(np.int64)
    bins -= bins.min()
    counts = np.bincount(bins.ravel())
    sums = np.bincount(bins.ravel(), weights=patch.ravel())
    good = counts > 0
    profile = sums[good] / counts[good]
    profile = profile - profile.mean()
    n = profile.size
    if n < 2 * PERIOD_MIN or not profile.any():
        return None

    ac = np.correlate(profile, profile, mode="full")[n - 1 :]
    if ac[0] <= 1e-12:
        return None
    ac = ac / ac[0]
    lo = int(PERIOD_MIN)
    hi = min(int(PERIOD_MAX) + 1, n - 1)
    if hi <= lo + 1:
        return None
    seg = ac[lo:hi]
    k = int(np.argmax(seg)) + lo
    if ac[k] < 0.2 or k == 0:
        return None
    if 0 < k < n - 1:  # parabolic refinement around the peak lag
        denom = ac[k - 1] - 2.0 * ac[k] + ac[k + 1]
        if abs(denom) > 1e-12:
            k = k + 0.5 * (ac[k - 1] - ac[k + 1]) / denom
    return float(np.clip(k, PERIOD_MIN, PERIOD_MAX))


def estimate_period(img: np.ndarray, orient: OrientationField, block: int = BLOCK) -> PeriodMap:
    """Ridge period per block from the projected intensity signature.

    Blocks without a usable orientation or without a periodic peak are
    invalid and afterwards filled from valid neighbors (median)."""
    img = np.asarray(img, dtype=np.float64)
    rows, cols = orient.theta.shape
    period = np.zeros((rows, cols), dtype=np.float64)
    valid = np.zeros((rows, cols), dtype=bool)
    for by in range(rows):
        cy = by * block + (block - 1) / 2.0
        for bx in range(cols):
            if not orient.valid[by, bx]:
                continue
            p = _block_period(img, cy, bx * block + (block - 1) / 2.0, orient.theta[by, bx])
            if p is not None:
                period[by, bx] = p
                valid[by, bx] = True

    defined = valid.copy()
    while True:  # neighbor fill, same policy as orientation
        cnt = ndimage.convolve(defined.astype(np.float64), np.ones((3, 3)), mode="constant")
        growable = ~defined & (cnt > 0)
        if not growable.any():
            break
        padded = np.where(defined, period, np.nan)
        for by, bx in zip(*np.nonzero(growable)):
            nb = padded[max(0, by - 1) : by + 2, max(0, bx - 1) : bx + 2]
            period[by, bx] = float(np.nanmedian(nb))
        defined |= growable
    return PeriodMap(period=period, valid=defined, block=block)


# ---------------------------------------------------------------------------
# Segmentation


def segment_mask(img: np.ndarray, block: int = BLOCK) -> np.ndarray:
    """Block-wise foreground decision from intensity variance and gradient
    coherence, morphologically closed, returned at pixel resolution."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    rows, cols = h // block, w // block
    view = img[: rows * block, : cols * block].reshape(rows, block, cols, block)
    stds = view.std(axis=(1, 3))
    coh = orientation_coherence(img, block)

    std_thresh = max(2.0, 0.3 * float(np.percentile(stds, 75)))
    fg = stds >= std_thresh
    fg &= (coh >= 0.1) | (stds >= 2.0 * std_thresh)
    fg = ndimage.binary_closing(fg, structure=np.ones((3, 3), dtype=bool))

    mask = np.zeros((h, w), dtype=bool)
    mask[: rows * block, : cols * block] = np.kron(fg, np.ones((block, block), dtype=bool))
    return mask


# ---------------------------------------------------------------------------
# Gabor filtering


def gabor_value(theta: float, f0: float, sigma_x: float, sigma_y: float, x, y):
    """Continuous complex Gabor response at offset (x, y) from the center."""
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    env = np.exp(-(xr**2 / (2.0 * sigma_x**2) + yr**2 / (2.0 * sigma_y**2)))
    return env * np.exp(1j * 2.0 * np.pi * f0 * xr)


def gabor_kernel(theta: float, f0: float, sigma_x: float, sigma_y: float, size: int) -> GaborKernel:
    """Sampled complex Gabor kernel; real part even, imaginary part odd
    along the rotated oscillation axis."""
    if size % 2 == 0:
        raise ValueError("kernel size must be odd")
    if f0 <= 0.0:
        raise ValueError("frequency must be positive")
    half = size // 2
    ys, xs = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    g = gabor_value(theta, f0, sigma_x, sigma_y, xs, ys)
    return GaborKernel(g.real.copy(), g.imag.copy(), theta, f0, sigma_x, sigma_y, size)


def kernel_size_for_sigma(sigma: float) -> int:
    size = int(round(KERNEL_SIGMA_SPAN * sigma))
    return size + 1 if size % 2 == 0 else size


def _quantized_kernel(cache: dict, theta: float, period: float) -> GaborKernel:
    qt = round(theta / _THETA_STEP)
    qp = round(period / _PERIOD_STEP)
    key = (qt, qp)
    if key not in cache:
        theta_q = qt * _THETA_STEP
        period_q = max(qp * _PERIOD_STEP, PERIOD_MIN)
        sigma = SIGMA_PER_PERIOD * period_q
        cache[key] = gabor_kernel(theta_q, 1.0 / period_q, sigma, sigma, kernel_size_for_sigma(sigma))
    return cache[key]


def enhance_and_phase(img: np.ndarray, orient: OrientationField, period: PeriodMap,
                      mask: np.ndarray):
    """Complex Gabor demodulation per block.

    Each pixel is filtered with the kernel selected by its block's
    orientation and period. Returns the enhanced image (masked zero-mean,
    unit-variance, clipped to [-3, 3]) and the phase map atan2(Re, Im) in
    (-pi, pi], zero outside the mask.
    """
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    h, w = img.shape
    block = orient.block
    rows, cols = orient.theta.shape

    fg_blocks = _block_reduce(mask[: rows * block, : cols * block].astype(np.float64), block) > 0
    bad = fg_blocks & ~(orient.valid & period.valid)
    if bad.any():
        by, bx = np.argwhere(bad)[0]
        raise ValueError(
            f"foreground block ({by},{bx}) has no defined orientation/period; "
            "run segmentation and neighbor fill first"
        )

    re = np.zeros((h, w), dtype=np.float64)
    im = np.zeros((h, w), dtype=np.float64)
    cache: dict = {}
    max_half = kernel_size_for_sigma(SIGMA_PER_PERIOD * PERIOD_MAX) // 2
    padded = np.pad(img, max_half, mode="edge")
    for by in range(rows):
        for bx in range(cols):
            if not fg_blocks[by, bx]:
                continue
            k = _quantized_kernel(cache, orient.theta[by, bx] + 0.5 * np.pi,
                                  period.period[by, bx])
            half = k.size // 2
            y0 = by * block + max_half
            x0 = bx * block + max_half
            win = padded[y0 - half : y0 + block + half, x0 - half : x0 + block + half]
            sw = np.lib.stride_tricks.sliding_window_view(win, (k.size, k.size))
            re[by * block : by * block + block, bx * block : bx * block + block] = np.tensordot(
                sw, k.real, axes=([2, 3], [0, 1])
            )
            im[by * block : by * block + block, bx * block : bx * block + block] = np.tensordot(
                sw, k.imag, axes=([2, 3], [0, 1])
            )

    enh = np.zeros((h, w), dtype=np.float64)
    inside = mask & (np.arange(h)[:, None] < rows * block) & (np.arange(w)[None, :] < cols * block)
    vals = re[inside]
    if vals.size:
        std = vals.std()
        enh[inside] = np.clip((vals - vals.mean()) / (std if std > 1e-12 else 1.0), -3.0, 3.0)

    phi = np.zeros((h, w), dtype=np.float64)
    phi[inside] = np.arctan2(re[inside], im[inside])  # argument order as published
    phi[phi == -np.pi] = np.pi
    return enh, phi


def preprocess_image(img: np.ndarray, block: int = BLOCK):
    """Full single-image feature stack: mask, orientation, period, E, phi."""
    mask = segment_mask(img, block)
    orient = estimate_orientation(img, block)
    period = estimate_period(img, orient, block)
    enh, phi = enhance_and_phase(img, orient, period, mask)
    return mask, orient, period, enh, phi


def preprocess_pair(img_in: np.ndarray, img_ref: np.ndarray, block: int = BLOCK) -> PreprocessedPair:
    """Masked enhancements and wrapped phase difference of an aligned pair.

    The phase difference is wrapped into (-pi, pi] and zeroed outside the
    mask intersection; an empty intersection sets ``overlap_empty``.
    """
    m_i, _, _, e_i, phi_i = preprocess_image(img_in, block)
    m_r, _, _, e_r, phi_r = preprocess_image(img_ref, block)
    common = m_i & m_r
    psi = np.where(common, wrap_phase(phi_i - phi_r), 0.0)
    return PreprocessedPair(
        enh_input=e_i * m_i,
        enh_ref=e_r * m_r,
        phase_diff=psi,
        mask_input=m_i,
        mask_ref=m_r,
        phase_input=phi_i,
        phase_ref=phi_r,
        overlap_empty=not common.any(),
    )


# ---------------------------------------------------------------------------
# Text I/O for block maps


def write_block_map_text(path, values: np.ndarray, valid: np.ndarray, fmt: str = "%.2f") -> None:
    lines = []
    for vrow, mrow in zip(values, valid):
        lines.append(" ".join((fmt % v) if ok else "-" for v, ok in zip(vrow, mrow)))
    from pathlib import Path

    Path(path).write_text("\n".join(lines) + "\n")


def write_orientation_text(path, orient: OrientationField) -> None:
    write_block_map_text(path, np.degrees(orient.theta), orient.valid)


def write_period_text(path, period: PeriodMap) -> None:
    write_block_map_text(path, period.period, period.valid)


def read_block_map_text(path):
    from pathlib import Path

    rows = []
    valid = []
    for line in Path(path).read_text().splitlines():
        toks = line.split()
        if not toks:
            continue
        rows.append([0.0 if t == "-" else float(t) for t in toks])
        valid.append([t != "-" for t in toks])
    return np.asarray(rows, dtype=np.float64), np.asarray(valid, dtype=bool)
