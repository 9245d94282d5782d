"""Closed-form texture generators.

Each generator is a pure function of (kind, params, seed): parameters
left unset are drawn from the seeded RNG in a fixed order, so the same
call reproduces the same image bit for bit. Values are float in [0,1];
quantization happens only at write time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvariantError

TEXTURE_KINDS = ("value-noise", "sine-grating", "voronoi", "gradient-blend")

DEFAULT_SIZE = 256


@dataclass(frozen=True, eq=False)
class ProcImage:
    """Float RGB image plus the record needed to regenerate it."""

    data: np.ndarray  # (height, width, 3) float64 in [0,1]
    provenance: dict

    def __post_init__(self) -> None:
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise InvariantError(f"image data must be h x w x 3, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise InvariantError("image data must be finite")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise InvariantError("image data must lie in [0,1]")
        self.data.flags.writeable = False

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])


def make_image(data: np.ndarray, provenance: dict) -> ProcImage:
    return ProcImage(data=np.asarray(data, dtype=np.float64), provenance=provenance)


def _pixel_coords(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates normalized to [0,1), x then y."""
    xs = (np.arange(width, dtype=np.float64) + 0.5) / width
    ys = (np.arange(height, dtype=np.float64) + 0.5) / height
    return np.meshgrid(xs, ys)


def _size(params: dict) -> tuple[int, int]:
    width = int(params.get("width", DEFAULT_SIZE))
    height = int(params.get("height", DEFAULT_SIZE))
    if width < 1 or height < 1:
        raise InvariantError(f"image size must be positive, got {width}x{height}")
    return width, height


def _value_noise_channel(
    rng: np.random.Generator, height: int, width: int, cells: int, octaves: int
) -> np.ndarray:
    """Octaves of bilinear lattice noise with smoothstep easing."""
    out = np.zeros((height, width))
    amplitude = 1.0
    total = 0.0
    for octave in range(octaves):
        c = cells * (2 ** octave)
        lattice = rng.random((c + 1, c + 1))
        ys = np.linspace(0.0, c, height, endpoint=False)
        xs = np.linspace(0.0, c, width, endpoint=False)
        y0 = ys.astype(np.int64)
        x0 = xs.astype(np.int64)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        fy = fy * fy * (3.0 - 2.0 * fy)
        fx = fx * fx * (3.0 - 2.0 * fx)
        v00 = lattice[np.ix_(y0, x0)]
        v01 = lattice[np.ix_(y0, x0 + 1)]
        v10 = lattice[np.ix_(y0 + 1, x0)]
        v11 = lattice[np.ix_(y0 + 1, x0 + 1)]
        top = v00 * (1.0 - fx) + v01 * fx
        bot = v10 * (1.0 - fx) + v11 * fx
        out += amplitude * (top * (1.0 - fy) + bot * fy)
        total += amplitude
        amplitude *= 0.5
    out /= total
    lo, hi = out.min(), out.max()
    return np.full_like(out, 0.5) if hi == lo else (out - lo) / (hi - lo)


def _gen_value_noise(params: dict, rng: np.random.Generator) -> np.ndarray:
    width, height = _size(params)
    cells = int(params.get("cells", 8))
    octaves = int(params.get("octaves", 3))
    if cells < 1 or octaves < 1:
        raise InvariantError("value-noise needs cells >= 1 and octaves >= 1")
    channels = [_value_noise_channel(rng, height, width, cells, octaves) for _ in range(3)]
    return np.stack(channels, axis=-1)


def _gen_sine_grating(params: dict, rng: np.random.Generator) -> np.ndarray:
    width, height = _size(params)
    # draw every free parameter, then let explicit params win
    frequency = rng.uniform(1.0, 8.0)
    angle = rng.uniform(0.0, 180.0)
    phase = rng.uniform(0.0, 1.0)
    color_a = rng.random(3)
    color_b = rng.random(3)
    frequency = float(params.get("frequency", frequency))
    angle = float(params.get("angle", angle))
    phase = float(params.get("phase", phase))
    color_a = np.asarray(params.get("color_a", color_a), dtype=np.float64)
    color_b = np.asarray(params.get("color_b", color_b), dtype=np.float64)
    if frequency < 0.0:
        raise InvariantError(f"sine-grating frequency must be >= 0, got {frequency}")
    if frequency == 0.0:
        t = np.full((height, width), 0.5)  # degenerate grating: the mean color
    else:
        x, y = _pixel_coords(height, width)
        theta = np.deg2rad(angle)
        u = x * np.cos(theta) + y * np.sin(theta)
        t = 0.5 + 0.5 * np.sin(2.0 * np.pi * (frequency * u + phase))
    t = np.clip(t, 0.0, 1.0)
    return color_a[None, None, :] * (1.0 - t[:, :, None]) + color_b[None, None, :] * t[:, :, None]


def _gen_voronoi(params: dict, rng: np.random.Generator) -> np.ndarray:
    width, height = _size(params)
    sites = int(params.get("sites", 12))
    if sites < 1:
        raise InvariantError(f"voronoi needs sites >= 1, got {sites}")
    positions = rng.random((sites, 2))  # (x, y) in [0,1)
    colors = rng.random((sites, 3))
    x, y = _pixel_coords(height, width)
    d2 = (x[:, :, None] - positions[None, None, :, 0]) ** 2
    d2 += (y[:, :, None] - positions[None, None, :, 1]) ** 2
    nearest = d2.argmin(axis=2)  # ties resolve to the lowest site index
    return colors[nearest]


def _gen_gradient_blend(params: dict, rng: np.random.Generator) -> np.ndarray:
    width, height = _size(params)
    angle = rng.uniform(0.0, 360.0)
    color_a = rng.random(3)
    color_b = rng.random(3)
    angle = float(params.get("angle", angle))
    color_a = np.asarray(params.get("color_a", color_a), dtype=np.float64)
    color_b = np.asarray(params.get("color_b", color_b), dtype=np.float64)
    x, y = _pixel_coords(height, width)
    theta = np.deg2rad(angle)
    u = x * np.cos(theta) + y * np.sin(theta)
    lo, hi = u.min(), u.max()
    t = np.full_like(u, 0.5) if hi == lo else (u - lo) / (hi - lo)
    return color_a[None, None, :] * (1.0 - t[:, :, None]) + color_b[None, None, :] * t[:, :, None]


_GENERATORS = {
    "value-noise": _gen_value_noise,
    "sine-grating": _gen_sine_grating,
    "voronoi": _gen_voronoi,
    "gradient-blend": _gen_gradient_blend,
}


def gen_texture(kind: str, params: dict | None, seed: int) -> ProcImage:
    """Render one texture; colors and layout not pinned by params come
    from the seeded RNG."""
    if kind not in _GENERATORS:
        raise InvariantError(f"unknown texture kind {kind!r}; choose from {TEXTURE_KINDS}")
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    data = np.clip(_GENERATORS[kind](params, rng), 0.0, 1.0)
    return make_image(data, {"pipeline": kind, "params": params, "seed": int(seed)})
