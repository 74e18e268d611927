"""Deterministic sprite rasterizer for posed skeletons.

Bones are capsules, joints are discs, edges are anti-aliased over one pixel
of signed distance. Color never feeds into coverage, so a styled render and
the neutral gray render of the same pose share a bitwise-identical alpha
channel. Images are [H, W, 4] float arrays in [0, 1] with alpha exactly 0
outside drawn geometry.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .config import RenderConfig
from .errors import ConfigError, DataError
from .kinematics import JointStates, Skeleton

GRAY_LEVEL = 0.5


@dataclass
class Camera:
    """Orthographic camera looking along an axis (default -z), principal
    point at the image center."""

    width: int = 64
    height: int = 64
    scale: float = 0.034  # world units per pixel
    view: str = "-z"

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError(f"camera scale must be positive, got {self.scale}")
        if self.view not in _VIEW_BASES:
            raise ConfigError(f"unsupported view direction {self.view!r}")

    def project(self, points: np.ndarray) -> np.ndarray:
        """World [N, 3] -> pixel [N, 2] (u right, v down)."""
        right, up = _VIEW_BASES[self.view]
        u = points @ right
        v = points @ up
        cx = (self.width - 1) / 2.0
        cy = (self.height - 1) / 2.0
        return np.stack([cx + u / self.scale, cy - v / self.scale], axis=-1)

    @classmethod
    def from_config(cls, cfg: RenderConfig) -> "Camera":
        return cls(width=cfg.size, height=cfg.size, scale=cfg.scale)


_VIEW_BASES = {
    # view direction -> (screen-right, screen-up) world axes
    "-z": (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
    "+z": (np.array([-1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
    "-x": (np.array([0.0, 0.0, -1.0]), np.array([0.0, 1.0, 0.0])),
    "+x": (np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0])),
    "-y": (np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, -1.0])),
    "+y": (np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])),
}


@dataclass
class AvatarStyle:
    bone_colors: np.ndarray  # [J-1, 3] in [0, 1], indexed by child joint - 1
    thickness: float = 2.0  # capsule radius, pixels
    joint_radius: float = 2.5  # pixels

    def __post_init__(self):
        self.bone_colors = np.asarray(self.bone_colors, dtype=np.float64)
        if ((self.bone_colors < 0) | (self.bone_colors > 1)).any():
            raise DataError("style colors must lie in [0, 1]")

    @classmethod
    def gray(cls, bones: int, thickness: float = 2.0,
             joint_radius: float = 2.5) -> "AvatarStyle":
        return cls(np.full((bones, 3), GRAY_LEVEL), thickness, joint_radius)

    @classmethod
    def random(cls, bones: int, rng: np.random.Generator,
               thickness: float = 2.0, joint_radius: float = 2.5) -> "AvatarStyle":
        return cls(rng.uniform(0.15, 0.95, size=(bones, 3)), thickness, joint_radius)


def _segment_coverage(px: np.ndarray, py: np.ndarray, a: np.ndarray,
                      b: np.ndarray, radius: float) -> np.ndarray:
    """Per-pixel coverage of a capsule from a to b (pixel coords)."""
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-12:
        dx = px - a[0]
        dy = py - a[1]
        dist = np.sqrt(dx * dx + dy * dy)
    else:
        t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom
        t = np.clip(t, 0.0, 1.0)
        dx = px - (a[0] + t * ab[0])
        dy = py - (a[1] + t * ab[1])
        dist = np.sqrt(dx * dx + dy * dy)
    return np.clip(radius + 0.5 - dist, 0.0, 1.0)


def _rasterize(skel: Skeleton, states: JointStates, cam: Camera,
               bone_colors: np.ndarray, thickness: float,
               joint_radius: float) -> np.ndarray:
    J = skel.joint_count
    pts = cam.project(states.positions)
    px, py = np.meshgrid(
        np.arange(cam.width, dtype=np.float64),
        np.arange(cam.height, dtype=np.float64),
        indexing="xy",
    )
    alpha = np.zeros((cam.height, cam.width))
    rgb = np.zeros((cam.height, cam.width, 3))
    # fixed element order: bones by child index, then joint discs; a pixel
    # takes the color of its highest-coverage element (first wins on ties)
    elements = []
    for child in range(1, J):
        parent = skel.parents[child]
        elements.append((pts[parent], pts[child], thickness, bone_colors[child - 1]))
    for j in range(J):
        color = bone_colors[j - 1] if j > 0 else bone_colors[0]
        elements.append((pts[j], pts[j], joint_radius, color))
    for a, b, radius, color in elements:
        cov = _segment_coverage(px, py, a, b, radius)
        better = cov > alpha
        alpha = np.where(better, cov, alpha)
        rgb = np.where(better[..., None], color, rgb)
    return np.concatenate([rgb, alpha[..., None]], axis=-1)


def render_avatar(skel: Skeleton, states: JointStates, style: AvatarStyle,
                  cam: Camera) -> np.ndarray:
    if style.bone_colors.shape != (skel.joint_count - 1, 3):
        raise DataError(
            f"style has {style.bone_colors.shape[0]} bone colors, "
            f"skeleton needs {skel.joint_count - 1}"
        )
    return _rasterize(skel, states, cam, style.bone_colors,
                      style.thickness, style.joint_radius)


def render_gray_body(skel: Skeleton, states: JointStates, cam: Camera,
                     thickness: float = 2.0, joint_radius: float = 2.5) -> np.ndarray:
    style = AvatarStyle.gray(skel.joint_count - 1, thickness, joint_radius)
    return render_avatar(skel, states, style, cam)


# -- image container -------------------------------------------------------------

MAGIC = b"PASRGBA1"


def save_rgba(path, raster: np.ndarray) -> None:
    """8-bit RGBA container: magic, u32 width, u32 height (little-endian),
    then H*W*4 bytes row-major."""
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim != 3 or raster.shape[2] != 4:
        raise DataError(f"expected [H, W, 4] raster, got shape {raster.shape}")
    h, w = raster.shape[:2]
    data = np.round(np.clip(raster, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(data.tobytes())


def load_rgba(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise DataError(f"not a {MAGIC.decode()} image: {path}")
    w, h = struct.unpack_from("<II", blob, 8)
    expected = 16 + w * h * 4
    if len(blob) != expected:
        raise DataError(f"truncated image file: {path}")
    data = np.frombuffer(blob, dtype=np.uint8, offset=16).reshape(h, w, 4)
    return data.astype(np.float64) / 255.0


# -- style file (json) -------------------------------------------------------------


def save_style(path, style: AvatarStyle) -> None:
    payload = {
        "bone_colors": style.bone_colors.tolist(),
        "thickness": style.thickness,
        "joint_radius": style.joint_radius,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def load_style(path) -> AvatarStyle:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return AvatarStyle(
            np.asarray(payload["bone_colors"], dtype=np.float64),
            float(payload.get("thickness", 2.0)),
            float(payload.get("joint_radius", 2.5)),
        )
    except (KeyError, ValueError, TypeError) as e:
        raise DataError(f"bad style file {path}: {e}") from None
