"""Gestalt grouping stimuli with exact ground-truth masks.

Every stimulus is a set of geometric elements (disks, segments, arcs,
rectangle outlines, cut disks) rasterized by evaluating each element's
analytic predicate at pixel centers — no anti-aliasing — so the label
mask and the drawn geometry agree pixel for pixel. Layouts are placed
with strict geometric disjointness between differently-labeled
elements; infeasible parameter combinations raise GeometryError.

The mask labels grouped elements (background and ungrouped cues are
ignore), giving the segmentation targets that perception probes score
against.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import GeometryError, InvariantError
from ..segmentation import IGNORE, LabelMask, make_mask
from .textures import ProcImage, make_image

GESTALT_PRINCIPLES = (
    "closure",
    "kanizsa",
    "connection",
    "continuity",
    "enclosure",
    "proximity",
    "similarity",
)

_DARK = (0.15, 0.15, 0.15)
_RED = (0.85, 0.20, 0.20)
_BLUE = (0.20, 0.20, 0.85)

_PLACE_ATTEMPTS = 4000


# ---------------------------------------------------------------------------
# element predicates


def _pixel_centers(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.arange(width, dtype=np.float64) + 0.5
    ys = np.arange(height, dtype=np.float64) + 0.5
    return np.meshgrid(xs, ys)


def _segment_distance_field(
    X: np.ndarray, Y: np.ndarray, x0: float, y0: float, x1: float, y1: float
) -> np.ndarray:
    dx, dy = x1 - x0, y1 - y0
    length2 = dx * dx + dy * dy
    if length2 == 0.0:
        return np.hypot(X - x0, Y - y0)
    t = np.clip(((X - x0) * dx + (Y - y0) * dy) / length2, 0.0, 1.0)
    return np.hypot(X - (x0 + t * dx), Y - (y0 + t * dy))


def element_pixels(el: dict, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Boolean pixel membership of one geometry record.

    Shared by the rasterizer and by consistency checks that re-derive
    masks from provenance.
    """
    kind = el["type"]
    if kind == "disk":
        return (X - el["cx"]) ** 2 + (Y - el["cy"]) ** 2 <= el["r"] ** 2
    if kind == "cut-disk":
        x0, y0, x1, y1 = el["cut"]
        inside = (X - el["cx"]) ** 2 + (Y - el["cy"]) ** 2 <= el["r"] ** 2
        cut = (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)
        return inside & ~cut
    if kind == "segment":
        d = _segment_distance_field(X, Y, el["x0"], el["y0"], el["x1"], el["y1"])
        return d <= el["half_width"]
    if kind == "arc":
        d2 = (X - el["cx"]) ** 2 + (Y - el["cy"]) ** 2
        ring = (d2 >= el["r_in"] ** 2) & (d2 <= el["r_out"] ** 2)
        rel = np.mod(np.arctan2(Y - el["cy"], X - el["cx"]) - el["a0"], 2.0 * math.pi)
        return ring & (rel <= el["span"])
    if kind == "rect-outline":
        x0, y0, x1, y1 = el["outer"]
        ix0, iy0, ix1, iy1 = el["inner"]
        outer = (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)
        inner = (X > ix0) & (X < ix1) & (Y > iy0) & (Y < iy1)
        return outer & ~inner
    raise InvariantError(f"unknown element type {kind!r}")


def _rasterize(
    elements: list[dict], height: int, width: int
) -> tuple[np.ndarray, np.ndarray]:
    X, Y = _pixel_centers(height, width)
    data = np.ones((height, width, 3), dtype=np.float64)
    labels = np.full((height, width), IGNORE, dtype=np.int64)
    for el in elements:
        mask = element_pixels(el, X, Y)
        data[mask] = np.asarray(el["color"], dtype=np.float64)
        if el["label"] is not None:
            labels[mask] = el["label"]
    return data, labels


# ---------------------------------------------------------------------------
# placement helpers


def _disk(cx: float, cy: float, r: float, label: int | None, color=_DARK) -> dict:
    return {
        "type": "disk",
        "cx": float(cx),
        "cy": float(cy),
        "r": float(r),
        "label": label,
        "color": list(color),
    }


def _scatter_disks(
    rng: np.random.Generator,
    n: int,
    r: float,
    box: tuple[float, float, float, float],
    taken: list[tuple[float, float, float]],
    reject=None,
    what: str = "dots",
) -> list[tuple[float, float]]:
    """Place n centers inside box, pairwise clear of each other and of
    every (cx, cy, clearance) entry in taken."""
    x0, y0, x1, y1 = box
    if x1 - x0 < 2 * r or y1 - y0 < 2 * r:
        raise GeometryError(f"{what}: radius {r} cannot fit the placement region")
    placed: list[tuple[float, float]] = []
    for _ in range(_PLACE_ATTEMPTS):
        if len(placed) == n:
            break
        cx = rng.uniform(x0 + r, x1 - r)
        cy = rng.uniform(y0 + r, y1 - r)
        if reject is not None and reject(cx, cy):
            continue
        if any((cx - px) ** 2 + (cy - py) ** 2 <= (2 * r + 2.0) ** 2 for px, py in placed):
            continue
        if any((cx - tx) ** 2 + (cy - ty) ** 2 <= (r + tc) ** 2 for tx, ty, tc in taken):
            continue
        placed.append((cx, cy))
    if len(placed) < n:
        raise GeometryError(f"{what}: could not place {n} radius-{r} disks without overlap")
    return placed


def _segments_intersect(a, b) -> bool:
    (ax0, ay0), (ax1, ay1) = a
    (bx0, by0), (bx1, by1) = b

    def orient(px, py, qx, qy, rx, ry):
        return (qx - px) * (ry - py) - (qy - py) * (rx - px)

    d1 = orient(bx0, by0, bx1, by1, ax0, ay0)
    d2 = orient(bx0, by0, bx1, by1, ax1, ay1)
    d3 = orient(ax0, ay0, ax1, ay1, bx0, by0)
    d4 = orient(ax0, ay0, ax1, ay1, bx1, by1)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _point_segment_distance(px, py, x0, y0, x1, y1) -> float:
    dx, dy = x1 - x0, y1 - y0
    length2 = dx * dx + dy * dy
    if length2 == 0.0:
        return math.hypot(px - x0, py - y0)
    t = min(1.0, max(0.0, ((px - x0) * dx + (py - y0) * dy) / length2))
    return math.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def _segment_segment_distance(a, b) -> float:
    if _segments_intersect(a, b):
        return 0.0
    (ax0, ay0), (ax1, ay1) = a
    (bx0, by0), (bx1, by1) = b
    return min(
        _point_segment_distance(ax0, ay0, bx0, by0, bx1, by1),
        _point_segment_distance(ax1, ay1, bx0, by0, bx1, by1),
        _point_segment_distance(bx0, by0, ax0, ay0, ax1, ay1),
        _point_segment_distance(bx1, by1, ax0, ay0, ax1, ay1),
    )


def _size(params: dict) -> tuple[int, int]:
    width = int(params.get("width", 256))
    height = int(params.get("height", 256))
    if width < 32 or height < 32:
        raise GeometryError(f"canvas {width}x{height} too small for gestalt layouts")
    return width, height


def _px(params: dict, key: str, default_at_256: float, scale: float) -> float:
    """Pixel-unit parameter default, proportional to canvas size.

    Floored at 1.5 px so every element covers at least one pixel center.
    """
    return float(params.get(key, max(1.5, default_at_256 * scale)))


# ---------------------------------------------------------------------------
# principles


def _build_proximity(params: dict, rng: np.random.Generator) -> list[dict]:
    width, height = _size(params)
    scale = min(width, height) / 256.0
    n = int(params.get("dots_per_group", 8))
    r = _px(params, "radius", 6.0, scale)
    if n < 1 or r <= 0:
        raise GeometryError("proximity: need dots_per_group >= 1 and radius > 0")
    gap = 0.16 * width
    boxes = [
        (0.08 * width, 0.25 * height, 0.42 * width, 0.75 * height),
        (0.58 * width, 0.25 * height, 0.92 * width, 0.75 * height),
    ]
    if gap <= 2 * r:
        raise GeometryError("proximity: groups would not be separated at this radius")
    elements = []
    for label, box in enumerate(boxes):
        for cx, cy in _scatter_disks(rng, n, r, box, [], what="proximity"):
            elements.append(_disk(cx, cy, r, label))
    return elements


def _build_similarity(params: dict, rng: np.random.Generator) -> list[dict]:
    width, height = _size(params)
    rows = int(params.get("rows", 6))
    cols = int(params.get("cols", 6))
    if rows < 2 or cols < 2:
        raise GeometryError("similarity: need at least a 2x2 grid")
    margin = 0.12 * min(width, height)
    sx = (width - 2 * margin) / (cols - 1)
    sy = (height - 2 * margin) / (rows - 1)
    r = float(params.get("radius", 0.3 * min(sx, sy)))
    if r <= 0 or 2 * r >= min(sx, sy):
        raise GeometryError("similarity: dot radius must be positive and below half the spacing")
    colors = (_RED, _BLUE)
    elements = []
    for i in range(rows):
        for j in range(cols):
            parity = (i + j) % 2
            elements.append(
                _disk(margin + j * sx, margin + i * sy, r, parity, colors[parity])
            )
    return elements


def _build_closure(params: dict, rng: np.random.Generator) -> list[dict]:
    width, height = _size(params)
    scale = min(width, height) / 256.0
    n_arcs = int(params.get("arcs", 8))
    gap_fraction = float(params.get("gap_fraction", 0.25))
    thickness = _px(params, "thickness", 5.0, scale)
    n_distractors = int(params.get("distractors", 10))
    if n_arcs < 2 or not 0.0 < gap_fraction < 1.0 or thickness <= 0:
        raise GeometryError("closure: need arcs >= 2, 0 < gap_fraction < 1, thickness > 0")
    cx, cy = width / 2.0, height / 2.0
    radius = 0.30 * min(width, height)
    span = (1.0 - gap_fraction) * 2.0 * math.pi / n_arcs
    phase = rng.uniform(0.0, 2.0 * math.pi)
    elements = [
        {
            "type": "arc",
            "cx": cx,
            "cy": cy,
            "r_in": radius - thickness / 2.0,
            "r_out": radius + thickness / 2.0,
            "a0": phase + i * 2.0 * math.pi / n_arcs,
            "span": span,
            "label": 1,
            "color": list(_DARK),
        }
        for i in range(n_arcs)
    ]
    r_dot = _px(params, "dot_radius", 5.0, scale)
    ring_clear = radius + thickness / 2.0 + r_dot + 4.0
    inner_clear = radius - thickness / 2.0 - r_dot - 4.0

    def near_ring(px: float, py: float) -> bool:
        d = math.hypot(px - cx, py - cy)
        return inner_clear < d < ring_clear

    box = (0.04 * width, 0.04 * height, 0.96 * width, 0.96 * height)
    for dx, dy in _scatter_disks(
        rng, n_distractors, r_dot, box, [], reject=near_ring, what="closure"
    ):
        elements.append(_disk(dx, dy, r_dot, 0))
    return elements


def _build_kanizsa(params: dict, rng: np.random.Generator) -> list[dict]:
    width, height = _size(params)
    side = float(params.get("side", 0.40 * min(width, height)))
    r = float(params.get("radius", 0.08 * min(width, height)))
    n_distractors = int(params.get("distractors", 3))
    if r <= 0 or r >= side / 2.0:
        raise GeometryError("kanizsa: inducer radius must sit in (0, side/2)")
    cx, cy = width / 2.0, height / 2.0
    x0, y0 = cx - side / 2.0, cy - side / 2.0
    x1, y1 = cx + side / 2.0, cy + side / 2.0
    if x0 - r < 0 or y0 - r < 0 or x1 + r > width or y1 + r > height:
        raise GeometryError("kanizsa: square plus inducers exceeds the canvas")
    cut = [x0, y0, x1, y1]
    corners = [(corner_x, corner_y) for corner_x in (x0, x1) for corner_y in (y0, y1)]
    elements = [
        {
            "type": "cut-disk",
            "cx": corner_x,
            "cy": corner_y,
            "r": r,
            "cut": cut,
            "label": 1,
            "color": list(_DARK),
        }
        for corner_x, corner_y in corners
    ]

    def hits_figure(px: float, py: float) -> bool:
        # distance from the square's rectangle...
        rect_d = math.hypot(max(x0 - px, 0.0, px - x1), max(y0 - py, 0.0, py - y1))
        if rect_d <= r + 2.0:
            return True
        # ...and from each corner inducer disk
        return any(math.hypot(px - kx, py - ky) <= 2.0 * r + 4.0 for kx, ky in corners)

    box = (0.03 * width, 0.03 * height, 0.97 * width, 0.97 * height)
    for dx, dy in _scatter_disks(
        rng, n_distractors, r, box, [], reject=hits_figure, what="kanizsa"
    ):
        elements.append(_disk(dx, dy, r, 0))
    return elements


def _build_connection(params: dict, rng: np.random.Generator) -> list[dict]:
    width, height = _size(params)
    scale = min(width, height) / 256.0
    n_pairs = int(params.get("pairs", 3))
    r = _px(params, "radius", 7.0, scale)
    half = _px(params, "line_half_width", 2.0, scale)
    if n_pairs < 1 or r <= 0 or half <= 0:
        raise GeometryError("connection: need pairs >= 1 and positive sizes")
    margin = 0.06 * min(width, height)
    lo, hi = 0.25 * min(width, height), 0.45 * min(width, height)
    dots: list[tuple[float, float]] = []
    segs: list[tuple[tuple[float, float], tuple[float, float]]] = []
    for _ in range(_PLACE_ATTEMPTS):
        if len(segs) == n_pairs:
            break
        ax = rng.uniform(margin + r, width - margin - r)
        ay = rng.uniform(margin + r, height - margin - r)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        length = rng.uniform(lo, hi)
        bx = ax + length * math.cos(angle)
        by = ay + length * math.sin(angle)
        if not (margin + r <= bx <= width - margin - r and margin + r <= by <= height - margin - r):
            continue
        seg = ((ax, ay), (bx, by))
        ok = all(
            math.hypot(ax - px, ay - py) > 2 * r + 4 and math.hypot(bx - px, by - py) > 2 * r + 4
            for px, py in dots
        )
        ok = ok and all(
            _point_segment_distance(px, py, ax, ay, bx, by) > r + half + 3 for px, py in dots
        )
        ok = ok and all(
            _point_segment_distance(px, py, s[0][0], s[0][1], s[1][0], s[1][1]) > r + half + 3
            for s in segs
            for px, py in (seg[0], seg[1])
        )
        ok = ok and all(_segment_segment_distance(seg, s) > 2 * half + 3 for s in segs)
        if not ok:
            continue
        dots.extend([seg[0], seg[1]])
        segs.append(seg)
    if len(segs) < n_pairs:
        raise GeometryError(f"connection: could not place {n_pairs} connected pairs")
    elements = []
    for label, ((ax, ay), (bx, by)) in enumerate(segs):
        elements.append(
            {
                "type": "segment",
                "x0": ax,
                "y0": ay,
                "x1": bx,
                "y1": by,
                "half_width": half,
                "label": label,
                "color": list(_DARK),
            }
        )
        elements.append(_disk(ax, ay, r, label))
        elements.append(_disk(bx, by, r, label))
    return elements


def _build_continuity(params: dict, rng: np.random.Generator) -> list[dict]:
    width, height = _size(params)
    scale = min(width, height) / 256.0
    n = int(params.get("dots_per_path", 10))
    r = _px(params, "radius", 5.0, scale)
    if n < 2 or n % 2 != 0:
        raise GeometryError("continuity: dots_per_path must be even and >= 2")
    margin = 0.08 * min(width, height)
    a0, a1 = (margin, margin), (width - margin, height - margin)
    b0, b1 = (margin, height - margin), (width - margin, margin)
    paths = []
    for (sx, sy), (ex, ey) in ((a0, a1), (b0, b1)):
        ts = (np.arange(n) + 0.5) / n
        paths.append(np.stack([sx + ts * (ex - sx), sy + ts * (ey - sy)], axis=1))
    cross = np.hypot(
        paths[0][:, None, 0] - paths[1][None, :, 0],
        paths[0][:, None, 1] - paths[1][None, :, 1],
    )
    within = np.hypot(*(np.diff(paths[0], axis=0).T))
    if cross.min() <= 2 * r + 1 or within.min() <= 2 * r + 1:
        raise GeometryError("continuity: dot radius too large for the path spacing")
    elements = []
    for label, path in enumerate(paths):
        for cx, cy in path:
            elements.append(_disk(cx, cy, r, label))
    return elements


def _build_enclosure(params: dict, rng: np.random.Generator) -> list[dict]:
    width, height = _size(params)
    scale = min(width, height) / 256.0
    n_in = int(params.get("dots_inside", 6))
    n_out = int(params.get("dots_outside", 6))
    r = _px(params, "radius", 6.0, scale)
    thickness = _px(params, "thickness", 4.0, scale)
    if min(n_in, n_out) < 1 or r <= 0 or thickness <= 0:
        raise GeometryError("enclosure: need dots on both sides and positive sizes")
    cx, cy = width / 2.0, height / 2.0
    half = 0.30 * min(width, height)
    outer = [cx - half, cy - half, cx + half, cy + half]
    inner = [outer[0] + thickness, outer[1] + thickness, outer[2] - thickness, outer[3] - thickness]
    elements = [
        {
            "type": "rect-outline",
            "outer": outer,
            "inner": inner,
            "label": None,  # the boundary is a cue, not a grouped element
            "color": list(_DARK),
        }
    ]
    pad = max(2.0, 6.0 * scale)
    inside_box = (inner[0] + pad, inner[1] + pad, inner[2] - pad, inner[3] - pad)
    for px, py in _scatter_disks(rng, n_in, r, inside_box, [], what="enclosure inside"):
        elements.append(_disk(px, py, r, 1))

    def in_outer_zone(px: float, py: float) -> bool:
        return (
            outer[0] - pad - r < px < outer[2] + pad + r
            and outer[1] - pad - r < py < outer[3] + pad + r
        )

    canvas_box = (0.03 * width, 0.03 * height, 0.97 * width, 0.97 * height)
    for px, py in _scatter_disks(
        rng, n_out, r, canvas_box, [], reject=in_outer_zone, what="enclosure outside"
    ):
        elements.append(_disk(px, py, r, 0))
    return elements


_BUILDERS = {
    "closure": _build_closure,
    "kanizsa": _build_kanizsa,
    "connection": _build_connection,
    "continuity": _build_continuity,
    "enclosure": _build_enclosure,
    "proximity": _build_proximity,
    "similarity": _build_similarity,
}


def gen_gestalt(
    principle: str, params: dict | None, seed: int
) -> tuple[ProcImage, LabelMask]:
    """Render one grouping stimulus and its ground-truth mask."""
    if principle not in _BUILDERS:
        raise InvariantError(
            f"unknown gestalt principle {principle!r}; choose from {GESTALT_PRINCIPLES}"
        )
    params = dict(params or {})
    width, height = _size(params)
    rng = np.random.default_rng(seed)
    elements = _BUILDERS[principle](params, rng)
    data, labels = _rasterize(elements, height, width)
    image = make_image(
        data,
        {
            "pipeline": "gestalt",
            "params": {"principle": principle, **params},
            "seed": int(seed),
            "elements": elements,
        },
    )
    return image, make_mask(labels)
