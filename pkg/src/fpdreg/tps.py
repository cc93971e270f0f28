"""Thin-plate-spline fitting, evaluation and field extrapolation.

Kernel U(r) = r^2 log r with U(0) = 0, affine part included, solved by a
pivoted dense factorization. Used for coarse alignment from minutiae pairs,
for extending network fields outside the overlap region, and for synthetic
distortion generation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagecore import DisplacementField

EXTRAPOLATE_STRIDE = 4
EXTRAPOLATE_REG = 1e-3


@dataclass
class TPSModel:
    """Fitted spline: f(p) = affine(p) + sum_i w_i * U(|p - c_i|) per axis.

    ``control_points`` is (n, 2); ``weights`` is (n, 2) kernel coefficients
    and ``affine`` is (3, 2) as rows [constant, x-coeff, y-coeff], one
    column per output axis.
    """

    control_points: np.ndarray
    weights: np.ndarray
    affine: np.ndarray


def _kernel_u(r2: np.ndarray) -> np.ndarray:
    # U(r) = r^2 log r = 0.5 * r^2 log r^2, finite at r = 0.
    out = np.zeros_like(r2)
    pos = r2 > 0.0
    out[pos] = 0.5 * r2[pos] * np.log(r2[pos])
    return out


def _pairwise_u(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return _kernel_u(np.einsum("ijk,ijk->ij", diff, diff))


def tps_fit(src, dst, reg: float = 0.0) -> TPSModel:
    """Fit the spline mapping ``src`` points onto ``dst`` points.

    ``reg`` adds a ridge term on the kernel block; 0 gives exact
    interpolation. Raises ValueError for fewer than 3 or collinear sources.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ValueError("source and target point lists differ in length")
    n = src.shape[0]
    if n < 3:
        raise ValueError("insufficient control points: need >= 3 non-collinear")
    if reg < 0.0:
        raise ValueError("regularization must be non-negative")

    p = np.column_stack([np.ones(n), src])
    if np.linalg.matrix_rank(p) < 3:
        raise ValueError("insufficient control points: source set is collinear")

    k = _pairwise_u(src, src) + reg * np.eye(n)
    lhs = np.zeros((n + 3, n + 3), dtype=np.float64)
    lhs[:n, :n] = k
    lhs[:n, n:] = p
    lhs[n:, :n] = p.T
    rhs = np.zeros((n + 3, 2), dtype=np.float64)
    rhs[:n] = dst
    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"singular TPS system: {exc}") from exc
    return TPSModel(control_points=src.copy(), weights=sol[:n], affine=sol[n:])


def tps_eval(model: TPSModel, pts) -> np.ndarray:
    """Evaluate the spline at (m, 2) query points; returns (m, 2)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    u = _pairwise_u(pts, model.control_points)
    out = model.affine[0][None, :] + pts @ model.affine[1:]
    return out + u @ model.weights


def tps_fit_scalar(src, values, reg: float = 0.0) -> TPSModel:
    """Single-axis convenience: interpolate scalar samples over 2-D points."""
    values = np.asarray(values, dtype=np.float64).ravel()
    dst = np.column_stack([values, np.zeros_like(values)])
    return tps_fit(src, dst, reg)


def tps_eval_scalar(model: TPSModel, pts) -> np.ndarray:
    return tps_eval(model, pts)[:, 0]


def tps_extrapolate_field(field: DisplacementField, overlap: np.ndarray) -> DisplacementField:
    """Replace field values outside ``overlap`` by a TPS extension.

    The spline per axis is fit on a stride-4 subsample of covered cells
    (lightly regularized for stability); covered cells are left untouched.
    """
    overlap = np.asarray(overlap, dtype=bool)
    if overlap.shape != field.dx.shape:
        raise ValueError("overlap mask does not match field dimensions")
    if not overlap.any():
        raise ValueError("overlap region is empty; nothing to extrapolate from")
    if overlap.all():
        return field.copy()

    h, w = overlap.shape
    ys, xs = np.mgrid[0:h, 0:w]
    sub = np.zeros_like(overlap)
    sub[::EXTRAPOLATE_STRIDE, ::EXTRAPOLATE_STRIDE] = True
    picked = overlap & sub
    if picked.sum() < 3:
        picked = overlap  # tiny overlap: use every covered cell
    src = np.column_stack([xs[picked], ys[picked]]).astype(np.float64)
    outside = ~overlap
    query = np.column_stack([xs[outside], ys[outside]]).astype(np.float64)

    dx = field.dx.copy()
    dy = field.dy.copy()
    for comp, arr in ((field.dx, dx), (field.dy, dy)):
        try:
            model = tps_fit_scalar(src, comp[picked], reg=EXTRAPOLATE_REG)
        except ValueError:
            # collinear subsample (degenerate sliver): fall back to mean value
            arr[outside] = comp[picked].mean()
            continue
        arr[outside] = tps_eval_scalar(model, query)
    return DisplacementField(dx, dy, field.scale)


# ---------------------------------------------------------------------------
# Serialization


def write_correspondences(path, src, dst) -> None:
    """Text correspondence list, one 'x1 y1 x2 y2' line per pair."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    lines = [f"{a[0]:.6f} {a[1]:.6f} {b[0]:.6f} {b[1]:.6f}" for a, b in zip(src, dst)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_correspondences(path):
    src, dst = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        x1, y1, x2, y2 = (float(t) for t in line.split())
        src.append((x1, y1))
        dst.append((x2, y2))
    return np.asarray(src), np.asarray(dst)


def model_to_text(model: TPSModel) -> str:
    lines = [f"TPS {model.control_points.shape[0]}"]
    lines += ["affine " + " ".join(f"{v:.17g}" for v in model.affine.ravel())]
    for c, w in zip(model.control_points, model.weights):
        lines.append(f"{c[0]:.17g} {c[1]:.17g} {w[0]:.17g} {w[1]:.17g}")
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> TPSModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "TPS":
        raise ValueError("not a TPS model block")
    n = int(head[1])
    affine = np.array([float(v) for v in lines[1].split()[1:]]).reshape(3, 2)
    rows = np.array([[float(v) for v in ln.split()] for ln in lines[2 : 2 + n]])
    return TPSModel(rows[:, :2].copy(), rows[:, 2:].copy(), affine)
