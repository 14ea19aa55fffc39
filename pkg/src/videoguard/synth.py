"""Synthetic clips used in place of real footage."""

from dataclasses import dataclass

import numpy as np

KINDS = ("moving_square", "translating_gradient", "bouncing_dot")


@dataclass(frozen=True)
class SyntheticPattern:
    kind: str = "moving_square"
    velocity: float = 2.0
    scale: int = 16
    background: float = 0.2
    color: tuple = (0.9, 0.6, 0.3)
    start: tuple = (4, 24)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if self.scale < 1:
            raise ValueError("object scale must be positive")
        if not 0.0 <= self.background <= 1.0:
            raise ValueError("background level must lie in [0, 1]")


def _square(F, C, H, W, p):
    x0, y0 = p.start
    v = np.empty((F, C, H, W))
    for f in range(F):
        x = x0 + p.velocity * f
        if x < 0 or x + p.scale > W or y0 < 0 or y0 + p.scale > H:
            raise ValueError(f"object leaves the frame at frame {f}")
        frame = np.full((C, H, W), p.background)
        xs = np.arange(W)
        cols = (xs >= x) & (xs < x + p.scale)
        for ch in range(C):
            frame[ch, y0:y0 + p.scale, cols] = p.color[ch % len(p.color)]
        v[f] = frame
    return v


def _gradient(F, C, H, W, p):
    """A soft vertical band with a linear ramp profile sliding right."""
    x0 = p.start[0]
    xs = np.arange(W) + 0.5
    v = np.empty((F, C, H, W))
    for f in range(F):
        left = x0 + p.velocity * f
        if left < 0 or left + p.scale > W:
            raise ValueError(f"object leaves the frame at frame {f}")
        pos = (xs - left) / p.scale
        profile = np.where((pos >= 0) & (pos <= 1), 1.0 - np.abs(2.0 * pos - 1.0), 0.0)
        for ch in range(C):
            level = p.background + (p.color[ch % len(p.color)] - p.background) * profile
            v[f, ch] = np.broadcast_to(level, (H, W))
    return v


def _dot(F, C, H, W, p):
    """Disk of diameter ``scale`` moving diagonally, reflecting off the walls."""
    r = p.scale / 2.0
    if p.scale > min(H, W):
        raise ValueError("dot does not fit in the frame")
    yy, xx = np.mgrid[0:H, 0:W] + 0.5
    cx, cy = p.start[0] + r, p.start[1] + r
    if not (r <= cx <= W - r and r <= cy <= H - r):
        raise ValueError("dot starts outside the frame")
    vx = vy = p.velocity
    v = np.empty((F, C, H, W))
    for f in range(F):
        inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        for ch in range(C):
            v[f, ch] = np.where(inside, p.color[ch % len(p.color)], p.background)
        cx, cy = cx + vx, cy + vy
        if cx < r or cx > W - r:
            vx = -vx
            cx = min(max(cx, r), W - r)
        if cy < r or cy > H - r:
            vy = -vy
            cy = min(max(cy, r), H - r)
    return v


def synth_video(p, F=8, H=64, W=64, C=3):
    """Render ``p`` as an ``F x C x H x W`` video in [0, 1]."""
    render = {"moving_square": _square, "translating_gradient": _gradient,
              "bouncing_dot": _dot}[p.kind]
    return np.clip(render(F, C, H, W, p), 0.0, 1.0)


def default_corpus():
    """Five clips covering every pattern kind and a range of speeds."""
    return [
        SyntheticPattern("moving_square", velocity=2, scale=16, background=0.2,
                         color=(0.9, 0.6, 0.3), start=(4, 24)),
        SyntheticPattern("moving_square", velocity=4, scale=12, background=0.5,
                         color=(0.1, 0.3, 0.8), start=(2, 8)),
        SyntheticPattern("translating_gradient", velocity=3, scale=20, background=0.3,
                         color=(0.8, 0.8, 0.2), start=(6, 0)),
        SyntheticPattern("bouncing_dot", velocity=5, scale=14, background=0.25,
                         color=(0.2, 0.9, 0.4), start=(10, 30)),
        SyntheticPattern("moving_square", velocity=1, scale=24, background=0.7,
                         color=(0.3, 0.1, 0.2), start=(20, 30)),
    ]
