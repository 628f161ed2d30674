"""Synthetic surveillance videos with a known low BM-rank factorization.

A static background image is overlaid with up to two constant-intensity
rectangles moving along explicit trajectories.  Frame ``j`` of the video is

    frame_j = X - diag(b_j) X diag(c_j) + alpha * b_j c_j^T

where ``b_j`` and ``c_j`` are 0/1 indicators of the rows and columns covered
by the object, so the rectangle is replaced by ``alpha`` and everything else
is left untouched.  The first factor term carries the background and each
object adds one more term, unless two objects of equal intensity stay in the
same rows (or the same columns) in every frame, in which case they share a
term.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import zoom

from .bm_algebra import BmdFactors, bmp
from .errors import DimensionError, ParameterError

__all__ = [
    "ObjectSpec",
    "GenerativeVideo",
    "OverlapWarning",
    "linear_trajectory",
    "synth_video",
    "synthetic_background",
    "two_object_scenario",
    "color_two_object_scenario",
]


class OverlapWarning(UserWarning):
    """Two objects overlap in at least one frame."""


@dataclass
class ObjectSpec:
    """A rectangle of constant ``intensity`` and ``size`` (rows, cols).

    ``trajectory`` lists one top-left corner ``(row, col)`` per frame,
    0-based; the object covers rows ``row .. row + size[0] - 1``.
    """

    intensity: float
    size: tuple
    trajectory: list

    def __post_init__(self):
        self.intensity = float(self.intensity)
        self.size = (int(self.size[0]), int(self.size[1]))
        self.trajectory = [(int(r), int(c)) for r, c in self.trajectory]
        if self.size[0] < 1 or self.size[1] < 1:
            raise ParameterError(f"object size must be positive, got {self.size}")

    def row_mask(self, j: int, m: int) -> np.ndarray:
        r, _ = self.trajectory[j]
        mask = np.zeros(m)
        mask[r : r + self.size[0]] = 1.0
        return mask

    def col_mask(self, j: int, n: int) -> np.ndarray:
        _, c = self.trajectory[j]
        mask = np.zeros(n)
        mask[c : c + self.size[1]] = 1.0
        return mask

    def validate(self, m: int, n: int, p: int):
        if len(self.trajectory) != p:
            raise ParameterError(
                f"trajectory has {len(self.trajectory)} positions for {p} frames"
            )
        r1, r2 = self.size
        for j, (r, c) in enumerate(self.trajectory):
            if not (0 <= r <= m - r1 and 0 <= c <= n - r2):
                raise ParameterError(
                    f"object of size {self.size} at {(r, c)} in frame {j} leaves the {m}x{n} frame"
                )


@dataclass
class GenerativeVideo:
    """A synthetic video together with its ground-truth factors and split."""

    X: np.ndarray
    factors: BmdFactors
    background: np.ndarray
    foreground: np.ndarray
    rank: int
    background_image: np.ndarray
    objects: list = field(default_factory=list)
    overlap: bool = False


def linear_trajectory(start, velocity, p: int) -> list:
    """Positions ``start + j * velocity`` for ``j = 0 .. p - 1`` (rounded)."""
    r0, c0 = start
    vr, vc = velocity
    return [(int(round(r0 + j * vr)), int(round(c0 + j * vc))) for j in range(p)]


def _same_rows(a: ObjectSpec, b: ObjectSpec) -> bool:
    return a.size[0] == b.size[0] and all(pa[0] == pb[0] for pa, pb in zip(a.trajectory, b.trajectory))


def _same_cols(a: ObjectSpec, b: ObjectSpec) -> bool:
    return a.size[1] == b.size[1] and all(pa[1] == pb[1] for pa, pb in zip(a.trajectory, b.trajectory))


def _overlaps(a: ObjectSpec, b: ObjectSpec, p: int) -> bool:
    for j in range(p):
        (ra, ca), (rb, cb) = a.trajectory[j], b.trajectory[j]
        rows = ra < rb + b.size[0] and rb < ra + a.size[0]
        cols = ca < cb + b.size[1] and cb < ca + a.size[1]
        if rows and cols:
            return True
    return False


def _direct_video(background, objects, p):
    """Frame-by-frame rendering, later objects painted over earlier ones."""
    m, n = background.shape
    X = np.repeat(background[:, None, :], p, axis=1)
    for obj in objects:
        r1, r2 = obj.size
        for j, (r, c) in enumerate(obj.trajectory):
            X[r : r + r1, j, c : c + r2] = obj.intensity
    return X


def synth_video(background, objects=(), p: int = None) -> GenerativeVideo:
    """Build a synthetic video and its exact factor triple.

    Parameters
    ----------
    background : (m, n) array
        Static background image.
    objects : sequence of ObjectSpec
        At most two moving rectangles.
    p : int
        Number of frames; defaults to the trajectory length.

    Overlapping objects are rendered with the later object on top. In that
    case the returned factors no longer reproduce the video exactly, the
    ``overlap`` flag is set and an :class:`OverlapWarning` is issued.
    """
    Xb = np.asarray(background, dtype=np.float64)
    if Xb.ndim != 2:
        raise DimensionError(f"background must be a matrix, got shape {Xb.shape}")
    objects = list(objects)
    if len(objects) > 2:
        raise ParameterError("at most two objects are supported")
    if p is None:
        if not objects:
            raise ParameterError("frame count is required when there are no objects")
        p = len(objects[0].trajectory)
    p = int(p)
    if p < 1:
        raise ParameterError("frame count must be positive")
    m, n = Xb.shape
    for obj in objects:
        obj.validate(m, n, p)

    overlap = len(objects) == 2 and _overlaps(objects[0], objects[1], p)
    if overlap:
        warnings.warn("objects overlap; the later object is drawn on top", OverlapWarning, stacklevel=2)

    groups = []
    if len(objects) == 2 and objects[0].intensity == objects[1].intensity and not overlap and (
        _same_rows(*objects) or _same_cols(*objects)
    ):
        groups.append(objects)
    else:
        groups.extend([obj] for obj in objects)

    ell = 1 + len(groups)
    A = np.zeros((m, ell, n))
    B = np.zeros((m, p, ell))
    C = np.zeros((ell, p, n))
    A[:, 0, :] = Xb
    B[:, :, 0] = 1.0
    C[0, :, :] = 1.0
    for t, group in enumerate(groups, start=1):
        A[:, t, :] = -Xb + group[0].intensity
        shared_rows = len(group) == 2 and _same_rows(*group)
        for j in range(p):
            if len(group) == 1:
                B[:, j, t] = group[0].row_mask(j, m)
                C[t, j, :] = group[0].col_mask(j, n)
            elif shared_rows:
                B[:, j, t] = group[0].row_mask(j, m)
                C[t, j, :] = group[0].col_mask(j, n) + group[1].col_mask(j, n)
            else:
                B[:, j, t] = group[0].row_mask(j, m) + group[1].row_mask(j, m)
                C[t, j, :] = group[0].col_mask(j, n)
    factors = BmdFactors(A, B, C)

    X = _direct_video(Xb, objects, p) if overlap else bmp(factors)
    bg = np.repeat(Xb[:, None, :], p, axis=1)
    return GenerativeVideo(X, factors, bg, X - bg, ell, Xb.copy(), objects, overlap)


def synthetic_background(kind: str, m: int, n: int, seed: int = 0, value: float = 128.0) -> np.ndarray:
    """Deterministic m x n background image with values in [0, 255].

    ``kind`` is ``"constant"`` (every pixel ``value``), ``"gradient"``
    (rows running linearly from 0 to 255) or ``"perlin"`` (smooth value
    noise: a coarse random lattice upsampled by cubic interpolation,
    rescaled to the full range).
    """
    if m < 1 or n < 1:
        raise ParameterError("background dimensions must be positive")
    if kind == "constant":
        if not 0.0 <= value <= 255.0:
            raise ParameterError("constant value must lie in [0, 255]")
        return np.full((m, n), float(value))
    if kind == "gradient":
        col = np.linspace(0.0, 255.0, m) if m > 1 else np.zeros(1)
        return np.repeat(col[:, None], n, axis=1)
    if kind in ("perlin", "perlin-like", "noise"):
        rng = np.random.default_rng(seed)
        img = np.zeros((m, n))
        amp = 1.0
        for cells in (4, 8, 16):
            gm, gn = min(cells, m), min(cells, n)
            lattice = rng.random((gm + 1, gn + 1))
            up = zoom(lattice, (m / (gm + 1), n / (gn + 1)), order=3, mode="nearest", grid_mode=True)
            img += amp * up[:m, :n]
            amp *= 0.5
        lo, hi = img.min(), img.max()
        if hi > lo:
            img = (img - lo) / (hi - lo)
        else:
            img = np.zeros_like(img)
        return 255.0 * img
    raise ParameterError(f"unknown background kind {kind!r}")


def two_object_scenario(m: int = 50, n: int = 50, p: int = 30, seed: int = 0, kind: str = "perlin") -> GenerativeVideo:
    """Two objects of intensities 85 and 15 moving in different directions.

    Both cross the frame from left to right at the same speed; the first
    (5 x 5) descends from the top while the second (6 x 5) climbs from the
    bottom, so their row bands never meet.  The ground truth uses three
    terms, but because the two objects always share their columns the video
    is also reproduced by two.
    """
    bg = synthetic_background(kind, m, n, seed)
    width = 5
    dc = (n - width) / max(1, p - 1)
    dr = (m // 2 - 11) / max(1, p - 1)
    obj1 = ObjectSpec(85.0, (5, width), linear_trajectory((2, 0), (dr, dc), p))
    obj2 = ObjectSpec(15.0, (6, width), linear_trajectory((m - 8, 0), (-dr, dc), p))
    return synth_video(bg, [obj1, obj2], p)


def color_two_object_scenario(m: int = 50, n: int = 50, p: int = 30, seed: int = 0, kind: str = "perlin", q: int = 3):
    """Color version of :func:`two_object_scenario`.

    Every channel gets its own background (seeds ``seed .. seed + q - 1``)
    while the objects and their motion are shared.  Returns the (m, p, n, q)
    video and the per-channel :class:`GenerativeVideo` list.
    """
    videos = [two_object_scenario(m, n, p, seed + z, kind) for z in range(q)]
    X = np.stack([v.X for v in videos], axis=3)
    return X, videos
