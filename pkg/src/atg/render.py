"""Egocentric 84x84x3 rendering of the world, plus the ground-truth
bounding-box oracle and the left-right flip transforms.

Columns map linearly to view angle: column j covers the ray at
((j + 0.5) / W - 0.5) * fov to the right of the agent's heading. Wall
distances come from exact ray/segment intersection against the free/wall
cell boundaries, which is equivalent to a DDA march through the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np

from .world import Action, EnvSpec, Pose, WorldState, grid_from_rows, local_coords

FRAME_W = 84
FRAME_H = 84

DEFAULT_PALETTE: dict[str, tuple[float, float, float]] = {
    "wall-slate": (0.44, 0.47, 0.52),
    "floor-umber": (0.33, 0.25, 0.18),
    "ceil-charcoal": (0.13, 0.15, 0.19),
    "floor-moss": (0.22, 0.34, 0.19),
    "ceil-rust": (0.36, 0.20, 0.12),
    "monster-crimson": (0.86, 0.12, 0.10),
    "monster-amber": (0.93, 0.56, 0.12),
    "monster-moss": (0.38, 0.66, 0.24),
}

# appearance id -> (width scale, height scale) applied to the base sprite size
DEFAULT_SPRITE_SHAPES: dict[str, tuple[float, float]] = {
    "monster-crimson": (1.0, 1.0),
    "monster-amber": (1.25, 0.85),
    "monster-moss": (0.8, 1.15),
}


@dataclass(frozen=True)
class RenderConfig:
    fov: float = math.pi / 2
    columns: int = FRAME_W
    rows: int = FRAME_H
    max_view_distance: float = 20.0
    wall_height: float = 2.0
    eye_height: float = 1.0
    sprite_width: float = 1.0
    sprite_height: float = 1.4
    palette: Mapping[str, tuple[float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_PALETTE)
    )
    sprite_shapes: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_SPRITE_SHAPES)
    )

    def validate(self) -> None:
        if not (0 < self.fov < math.pi):
            raise ValueError("fov must be in (0, pi)")
        if self.columns <= 0 or self.rows <= 0:
            raise ValueError("frame dimensions must be positive")
        if self.max_view_distance <= 0 or self.sprite_width <= 0 or self.sprite_height <= 0:
            raise ValueError("distances and sprite sizes must be positive")

    def color(self, palette_id: str) -> np.ndarray:
        try:
            return np.asarray(self.palette[palette_id], dtype=np.float32)
        except KeyError:
            raise KeyError(f"palette id {palette_id!r} not in render palette") from None

    def sprite_size(self, appearance: str) -> tuple[float, float]:
        ws, hs = self.sprite_shapes.get(appearance, (1.0, 1.0))
        return self.sprite_width * ws, self.sprite_height * hs

    @property
    def proj_scale(self) -> float:
        """Pixels per unit tangent, shared by both axes (square pixels)."""
        return (self.columns / 2.0) / math.tan(self.fov / 2.0)


@dataclass(frozen=True)
class BBox:
    """Pixel-space box, center coordinates plus width/height."""

    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h


@lru_cache(maxsize=128)
def _boundary_segments(walls: tuple[str, ...], cell_size: float):
    """Axis-aligned faces between free and wall cells, in meters.

    Returns (vertical, horizontal) arrays: vertical rows are (x, y_lo, y_hi),
    horizontal rows are (y, x_lo, x_hi).
    """
    grid = grid_from_rows(walls)
    nx, ny = grid.shape
    s = cell_size
    vertical = []
    horizontal = []
    for ix in range(nx):
        for iy in range(ny):
            if not grid[ix, iy]:
                continue
            # emit a face when the neighbor is free (inside the map)
            if ix > 0 and not grid[ix - 1, iy]:
                vertical.append((ix * s, iy * s, (iy + 1) * s))
            if ix + 1 < nx and not grid[ix + 1, iy]:
                vertical.append(((ix + 1) * s, iy * s, (iy + 1) * s))
            if iy > 0 and not grid[ix, iy - 1]:
                horizontal.append((iy * s, ix * s, (ix + 1) * s))
            if iy + 1 < ny and not grid[ix, iy + 1]:
                horizontal.append(((iy + 1) * s, ix * s, (ix + 1) * s))
    v = np.asarray(vertical, dtype=np.float64).reshape(-1, 3)
    h = np.asarray(horizontal, dtype=np.float64).reshape(-1, 3)
    return v, h


def _wall_depths(spec: EnvSpec, agent: Pose, cfg: RenderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-column perpendicular wall distance (inf when nothing is hit) and
    the per-column angular offsets."""
    w = cfg.columns
    offsets = ((np.arange(w) + 0.5) / w - 0.5) * cfg.fov
    theta = agent.heading - offsets
    dirx = -np.sin(theta)
    diry = np.cos(theta)

    vseg, hseg = _boundary_segments(spec.walls, spec.cell_size)
    dist = np.full(w, np.inf)

    if len(vseg):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (vseg[:, 0][None, :] - agent.x) / dirx[:, None]  # (w, Mv)
        yhit = agent.y + t * diry[:, None]
        ok = (t > 1e-9) & (yhit >= vseg[:, 1][None, :] - 1e-9) & (yhit <= vseg[:, 2][None, :] + 1e-9)
        t = np.where(ok, t, np.inf)
        dist = np.minimum(dist, t.min(axis=1))
    if len(hseg):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (hseg[:, 0][None, :] - agent.y) / diry[:, None]
        xhit = agent.x + t * dirx[:, None]
        ok = (t > 1e-9) & (xhit >= hseg[:, 1][None, :] - 1e-9) & (xhit <= hseg[:, 2][None, :] + 1e-9)
        t = np.where(ok, t, np.inf)
        dist = np.minimum(dist, t.min(axis=1))

    return dist * np.cos(offsets), offsets


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _sprite_geometry(cfg: RenderConfig, xc: float, yc: float, width: float, height: float):
    """Screen extent of a billboard at camera-frame position (xc, yc).

    Returns (cols, depth, row_top, row_bot) or None when behind the camera
    plane, outside the view cone, or beyond the fog distance.
    """
    if yc <= 1e-6:
        return None
    dist = math.hypot(xc, yc)
    if dist > cfg.max_view_distance:
        return None
    phi = math.atan2(xc, yc)
    half_ang = math.atan2(width / 2.0, dist)
    w = cfg.columns
    c0 = (0.5 + (phi - half_ang) / cfg.fov) * w
    c1 = (0.5 + (phi + half_ang) / cfg.fov) * w
    centers = np.arange(w) + 0.5
    cols = np.nonzero((centers >= c0) & (centers < c1))[0]
    if cols.size == 0:
        return None
    proj = cfg.proj_scale
    r_top = cfg.rows / 2.0 + proj * (cfg.eye_height - height) / yc
    r_bot = cfg.rows / 2.0 + proj * cfg.eye_height / yc
    y0 = max(_round_half_up(r_top), 0)
    y1 = min(_round_half_up(r_bot), cfg.rows)
    if y1 <= y0:
        return None
    return cols, yc, y0, y1


def _sprites_in_view(state: WorldState, cfg: RenderConfig):
    """All drawable sprites (target plus visible distractors), far to near."""
    spec = state.spec
    entries = []
    tx, ty, _ = local_coords(state.agent, state.target)
    entries.append((ty, tx, spec.target_appearance))
    for d in spec.distractors:
        if not d.visible:
            continue
        dx, dy, _ = local_coords(state.agent, Pose(d.x, d.y, d.heading))
        entries.append((dy, dx, d.appearance))
    entries.sort(key=lambda e: -e[0])  # paint far sprites first
    return entries


def render_frame(state: WorldState, cfg: RenderConfig) -> np.ndarray:
    """Render the agent's first-person view as an (rows, columns, 3) float32
    array in [0, 1]. Honors spec.flip by mirroring the finished frame."""
    spec = state.spec
    h, w = cfg.rows, cfg.columns
    zbuf, offsets = _wall_depths(spec, state.agent, cfg)

    proj = cfg.proj_scale
    finite = np.isfinite(zbuf)
    safe = np.where(finite, zbuf, 1.0)
    r_top = np.where(finite, h / 2.0 + proj * (cfg.eye_height - cfg.wall_height) / safe, h / 2.0)
    r_bot = np.where(finite, h / 2.0 + proj * cfg.eye_height / safe, h / 2.0)
    y0 = np.floor(r_top + 0.5)
    y1 = np.floor(r_bot + 0.5)

    wall_rgb = np.broadcast_to(cfg.color(spec.wall_palette), (w, 3)).copy()
    wall_rgb[~finite | (zbuf > cfg.max_view_distance)] = 0.0  # fog to black

    rows_idx = np.arange(h, dtype=np.float64)[:, None]
    in_ceil = rows_idx < y0[None, :]
    in_floor = rows_idx >= y1[None, :]
    frame = np.where(
        in_ceil[:, :, None],
        cfg.color(spec.ceiling_palette),
        np.where(in_floor[:, :, None], cfg.color(spec.floor_palette), wall_rgb[None, :, :]),
    ).astype(np.float32)

    for yc, xc, appearance in _sprites_in_view(state, cfg):
        sw, sh = cfg.sprite_size(appearance)
        geo = _sprite_geometry(cfg, xc, yc, sw, sh)
        if geo is None:
            continue
        cols, depth, sy0, sy1 = geo
        visible = cols[depth < zbuf[cols]]
        if visible.size == 0:
            continue
        frame[sy0:sy1, visible] = cfg.color(appearance)

    if spec.flip:
        frame = frame[:, ::-1].copy()
    return frame


def ground_truth_bbox(state: WorldState, cfg: RenderConfig) -> BBox | None:
    """Pixel box around the target sprite, or None when the target is out of
    view or fully hidden behind walls. Uses the same projection as the
    renderer, so painted target pixels always fall inside the box."""
    spec = state.spec
    zbuf, _ = _wall_depths(spec, state.agent, cfg)
    tx, ty, _ = local_coords(state.agent, state.target)
    sw, sh = cfg.sprite_size(spec.target_appearance)
    geo = _sprite_geometry(cfg, tx, ty, sw, sh)
    if geo is None:
        return None
    cols, depth, y0, y1 = geo
    visible = cols[depth < zbuf[cols]]
    if visible.size == 0:
        return None
    c_lo, c_hi = int(visible.min()), int(visible.max())
    x = (c_lo + c_hi) / 2.0
    if spec.flip:
        x = (cfg.columns - 1) - x
    return BBox(x=x, y=(y0 + y1 - 1) / 2.0, w=float(c_hi - c_lo + 1), h=float(y1 - y0))


def flip_frame(frame: np.ndarray) -> np.ndarray:
    """Horizontal mirror: column j goes to column W-1-j."""
    return frame[:, ::-1].copy()


_FLIP_MAP = {
    Action.TURN_LEFT: Action.TURN_RIGHT,
    Action.TURN_RIGHT: Action.TURN_LEFT,
    Action.TURN_LEFT_MOVE: Action.TURN_RIGHT_MOVE,
    Action.TURN_RIGHT_MOVE: Action.TURN_LEFT_MOVE,
    Action.MOVE_FORWARD: Action.MOVE_FORWARD,
    Action.NO_OP: Action.NO_OP,
}


def flip_action(action: Action) -> Action:
    """Mirror an action left-right; forward and no-op are fixed points."""
    return _FLIP_MAP[action]


def frame_to_bytes(frame: np.ndarray) -> np.ndarray:
    """Quantize unit-interval values to uint8, rounding ties up."""
    return np.floor(np.asarray(frame, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, frame: np.ndarray) -> None:
    """Binary PPM (P6) dump of an RGB frame."""
    data = frame_to_bytes(frame)
    h, w, _ = data.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5) dump of a grayscale map."""
    data = frame_to_bytes(image)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())
