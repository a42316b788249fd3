"""Self-contained figure emission: binary PPM images, simple charts, and the
overhead trajectory overlay. A minimal format checker validates headers and
payload sizes so emitted artifacts can be verified without a viewer.
"""

from __future__ import annotations

import numpy as np

from .microworld import Scene, ego_frame_to_world
from .trajectory import Trajectory


class FigureFormatError(ValueError):
    pass


def write_ppm(path: str, image: np.ndarray) -> None:
    """Write a float image in [0, 1] (H, W, 3) as binary PPM (P6, maxval 255)."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FigureFormatError(f"image must be [H, W, 3], got {img.shape}")
    data = (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())


def check_ppm(path: str) -> tuple[int, int]:
    """Validate the P6 header and payload length; returns (width, height)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P6\n"):
        raise FigureFormatError("missing P6 magic")
    parts = raw.split(b"\n", 3)
    if len(parts) < 4:
        raise FigureFormatError("truncated header")
    try:
        width, height = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise FigureFormatError(f"malformed header: {exc}") from exc
    if maxval != 255:
        raise FigureFormatError(f"unsupported maxval {maxval}")
    if len(parts[3]) != width * height * 3:
        raise FigureFormatError(
            f"payload is {len(parts[3])} bytes, expected {width * height * 3}")
    return width, height


def colorize_depth(depth: np.ndarray, d_max: float = 80.0) -> np.ndarray:
    """Map metric depth to a near-warm / far-cool gradient, truncated at d_max."""
    d = np.clip(np.asarray(depth, dtype=np.float32), 0.0, d_max) / d_max
    near = np.array([0.95, 0.75, 0.2], dtype=np.float32)
    far = np.array([0.1, 0.2, 0.6], dtype=np.float32)
    return (1.0 - d[..., None]) * near + d[..., None] * far


def side_by_side(images: list[np.ndarray], pad: int = 2) -> np.ndarray:
    """Horizontal composition with a white gutter; images share height."""
    h = max(img.shape[0] for img in images)
    parts = []
    for i, img in enumerate(images):
        canvas = np.ones((h, img.shape[1], 3), dtype=np.float32)
        canvas[: img.shape[0]] = img
        parts.append(canvas)
        if i + 1 < len(images):
            parts.append(np.ones((h, pad, 3), dtype=np.float32))
    return np.concatenate(parts, axis=1)


def stack_rows_image(images: list[np.ndarray], pad: int = 2) -> np.ndarray:
    w = max(img.shape[1] for img in images)
    parts = []
    for i, img in enumerate(images):
        canvas = np.ones((img.shape[0], w, 3), dtype=np.float32)
        canvas[:, : img.shape[1]] = img
        parts.append(canvas)
        if i + 1 < len(images):
            parts.append(np.ones((pad, w, 3), dtype=np.float32))
    return np.concatenate(parts, axis=0)


_PALETTE = [
    (0.85, 0.25, 0.2), (0.2, 0.45, 0.85), (0.2, 0.7, 0.3), (0.85, 0.6, 0.15),
    (0.55, 0.3, 0.75), (0.3, 0.65, 0.65),
]


def line_chart(series: dict[str, list[float]], width: int = 480,
               height: int = 240) -> np.ndarray:
    """Plot one polyline per named series on shared axes."""
    img = np.ones((height, width, 3), dtype=np.float32)
    margin = 8
    values = [v for ys in series.values() for v in ys if np.isfinite(v)]
    if not values:
        return img
    lo, hi = min(values), max(values)
    if hi - lo < 1e-12:
        hi = lo + 1.0
    img[height - margin, :] = 0.6
    img[:, margin] = 0.6
    for idx, (_, ys) in enumerate(sorted(series.items())):
        color = np.array(_PALETTE[idx % len(_PALETTE)], dtype=np.float32)
        n = len(ys)
        if n < 2:
            continue
        xs = margin + (np.arange(n) / (n - 1)) * (width - 2 * margin)
        ys_px = (height - margin) - (np.asarray(ys) - lo) / (hi - lo) * (height - 2 * margin)
        for k in range(n - 1):
            steps = int(max(abs(xs[k + 1] - xs[k]), abs(ys_px[k + 1] - ys_px[k]), 1)) + 1
            xi = np.linspace(xs[k], xs[k + 1], steps).astype(int)
            yi = np.linspace(ys_px[k], ys_px[k + 1], steps).astype(int)
            ok = (yi >= 0) & (yi < height) & (xi >= 0) & (xi < width)
            img[yi[ok], xi[ok]] = color
    return img


def bar_chart(labels: list[str], values: list[float], width: int = 480,
              height: int = 240) -> np.ndarray:
    """One bar per label, heights scaled to the max value."""
    img = np.ones((height, width, 3), dtype=np.float32)
    if not values:
        return img
    margin = 8
    vmax = max(max(values), 1e-12)
    n = len(values)
    slot = (width - 2 * margin) // max(n, 1)
    bar_w = max(slot * 2 // 3, 1)
    for i, value in enumerate(values):
        x0 = margin + i * slot + (slot - bar_w) // 2
        bar_h = int((height - 2 * margin) * max(value, 0.0) / vmax)
        y0 = height - margin - bar_h
        color = np.array(_PALETTE[i % len(_PALETTE)], dtype=np.float32)
        img[y0: height - margin, x0: x0 + bar_w] = color
    img[height - margin, :] = 0.6
    return img


def overhead_overlay(scene: Scene, expert: Trajectory, predicted: Trajectory,
                     scale: float = 4.0, size: int = 320) -> np.ndarray:
    """Top-down view: corridor edges (gray), actors (red), expert plan (green),
    predicted plan (orange), under the documented projection
    px = size/2 + (p - ego) * scale with image y pointing down."""
    img = np.ones((size, size, 3), dtype=np.float32) * 0.97
    cx = np.array([scene.ego.x, scene.ego.y])

    def to_px(points: np.ndarray) -> np.ndarray:
        rel = (np.asarray(points, dtype=np.float64) - cx) * scale
        cols = (size / 2 + rel[:, 0]).astype(int)
        rows = (size / 2 - rel[:, 1]).astype(int)
        return np.stack([rows, cols], axis=1)

    def draw_points(points: np.ndarray, color, thick: int = 1) -> None:
        px = to_px(points)
        for r, c in px:
            r0, r1 = max(r - thick, 0), min(r + thick + 1, size)
            c0, c1 = max(c - thick, 0), min(c + thick + 1, size)
            if r1 > r0 and c1 > c0:
                img[r0:r1, c0:c1] = color

    for branch in scene.branches:
        for side in (+scene.half_width, -scene.half_width):
            draw_points(branch.offset_polyline(side), (0.7, 0.7, 0.7), thick=0)
    for actor in scene.actors:
        draw_points(actor.corners(), (0.85, 0.2, 0.2), thick=1)
    expert_world = np.array([[p[0], p[1]] for p in ego_frame_to_world(expert, scene.ego)])
    pred_world = np.array([[p[0], p[1]] for p in ego_frame_to_world(predicted, scene.ego)])
    draw_points(expert_world, (0.1, 0.65, 0.2), thick=1)
    draw_points(pred_world, (0.95, 0.55, 0.1), thick=1)
    draw_points(np.array([[scene.ego.x, scene.ego.y]]), (0.1, 0.1, 0.1), thick=2)
    return img


def project_to_pixel(scene: Scene, point_xy: tuple[float, float], scale: float = 4.0,
                     size: int = 320) -> tuple[int, int]:
    """The overlay's documented world-to-pixel projection for one point."""
    rel_x = (point_xy[0] - scene.ego.x) * scale
    rel_y = (point_xy[1] - scene.ego.y) * scale
    return int(size / 2 - rel_y), int(size / 2 + rel_x)
