"""Seeded synthetic building scenes, raster I/O and dataset manifests.

A scene is a ``3 x H x W`` image in ``[0, 1]`` and a binary ``1 x H x W``
mask. Buildings are (optionally rotated) rectangles; a pixel belongs to a
building iff its centre ``(col + 0.5, row + 0.5)`` lies inside the polygon.
Shadows and road-like stripes are painted into the image only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .serialization import FormatError, load_tensor, save_tensor

ROOF_COLORS = np.array([
    [0.78, 0.36, 0.30],
    [0.62, 0.62, 0.66],
    [0.88, 0.86, 0.80],
    [0.45, 0.50, 0.62],
    [0.70, 0.55, 0.40],
])
GROUND_COLORS = np.array([
    [0.30, 0.42, 0.25],
    [0.42, 0.45, 0.33],
    [0.50, 0.46, 0.38],
])
ROAD_COLOR = np.array([0.55, 0.55, 0.57])


@dataclass
class SceneSpec:
    extent: int = 64
    building_count: tuple = (2, 6)
    size_range: tuple = (6.0, 18.0)
    rotation: bool = True
    noise: float = 0.04
    shadow_prob: float = 0.5
    distractor_prob: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.building_count
        if lo < 0 or hi < lo:
            raise ValueError(f"building_count range {self.building_count} is empty or negative")
        smin, smax = self.size_range
        if smin <= 0 or smax < smin:
            raise ValueError(f"size_range {self.size_range} is empty or non-positive")
        if self.extent < 16 or self.extent % 16:
            raise ValueError(f"extent {self.extent} must be a positive multiple of 16")
        if self.noise < 0:
            raise ValueError("noise amplitude must be >= 0")
        for name in ("shadow_prob", "distractor_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")


@dataclass
class Scene:
    image: np.ndarray
    mask: np.ndarray
    seed: int
    polygons: list = field(default_factory=list)


def rectangle(cx: float, cy: float, w: float, h: float, angle: float) -> np.ndarray:
    """Corner list (x, y) of a rectangle rotated by ``angle`` radians, counter-clockwise."""
    dx, dy = w / 2.0, h / 2.0
    corners = np.array([[-dx, -dy], [dx, -dy], [dx, dy], [-dx, dy]])
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return corners @ rot.T + np.array([cx, cy])


def rasterize_convex(poly: np.ndarray, extent: int) -> np.ndarray:
    """Pixels whose centres fall inside a convex polygon (half-plane test)."""
    ys, xs = np.mgrid[0:extent, 0:extent]
    px, py = xs + 0.5, ys + 0.5
    inside = np.ones((extent, extent), dtype=bool)
    signed = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        signed += x0 * y1 - x1 * y0
    orient = 1.0 if signed > 0 else -1.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside &= orient * cross > 0
    return inside


def generate_scene(spec: SceneSpec) -> Scene:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.extent
    ground = GROUND_COLORS[rng.integers(len(GROUND_COLORS))]
    image = np.empty((3, n, n))
    image[:] = ground[:, None, None]
    # low-frequency ground variation
    coarse = rng.normal(0.0, 0.05, size=(3, n // 8, n // 8))
    image += np.kron(coarse, np.ones((8, 8)))

    if rng.random() < spec.distractor_prob:
        width = rng.uniform(3.0, 6.0)
        angle = rng.uniform(0, math.pi)
        length = 2.0 * n
        road = rectangle(rng.uniform(0, n), rng.uniform(0, n), length, width, angle)
        image[:, rasterize_convex(road, n)] = ROAD_COLOR[:, None]

    mask = np.zeros((n, n), dtype=bool)
    polygons = []
    count = int(rng.integers(spec.building_count[0], spec.building_count[1] + 1))
    smin, smax = spec.size_range
    for _ in range(count):
        w, h = rng.uniform(smin, smax, size=2)
        cx, cy = rng.uniform(0, n, size=2)
        angle = rng.uniform(0, math.pi / 2) if spec.rotation else 0.0
        poly = rectangle(cx, cy, w, h, angle)
        roof = ROOF_COLORS[rng.integers(len(ROOF_COLORS))] + rng.normal(0, 0.04, size=3)
        if rng.random() < spec.shadow_prob:
            offset = rng.uniform(1.5, 3.5)
            shade = rasterize_convex(poly + np.array([offset, offset]), n) & ~mask
            image[:, shade] *= 0.45
        body = rasterize_convex(poly, n)
        image[:, body] = roof[:, None]
        mask |= body
        polygons.append(poly)

    image += rng.normal(0.0, spec.noise, size=image.shape)
    np.clip(image, 0.0, 1.0, out=image)
    return Scene(image=image, mask=mask[None].astype(np.float64), seed=spec.seed, polygons=polygons)


def scene_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def generate_dataset(spec: SceneSpec, count: int, base_seed: int) -> list:
    scenes = []
    for i in range(count):
        s = SceneSpec(**{**vars(spec), "seed": scene_seed(base_seed, i)})
        scenes.append(generate_scene(s))
    return scenes


def split_even_odd(scenes: list):
    """Even scene indices train, odd indices validate."""
    return scenes[0::2], scenes[1::2]


def stack_batch(scenes: list, dtype=np.float32):
    images = np.stack([s.image for s in scenes]).astype(dtype)
    masks = np.stack([s.mask for s in scenes]).astype(dtype)
    return images, masks


# ----------------------------------------------------------------------
# PGM masks (P5, maxval 255; 0 = background, 255 = building)


def write_pgm(path, raster: np.ndarray) -> None:
    arr = np.asarray(raster)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"PGM raster must be 2-d, got {arr.shape}")
    arr = arr.astype(np.uint8)
    h, w = arr.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes())


def write_mask_pgm(path, mask: np.ndarray) -> None:
    write_pgm(path, (np.asarray(mask) > 0.5).astype(np.uint8) * 255)


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    return parse_pgm(blob)


def parse_pgm(blob: bytes) -> np.ndarray:
    if blob[:2] != b"P5":
        raise FormatError("missing P5 magic", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and blob[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("expected a decimal header field", pos)
        fields.append(int(blob[start:pos]))
    if pos >= len(blob) or not blob[pos : pos + 1].isspace():
        raise FormatError("header not terminated by whitespace", pos)
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}", pos)
    if len(blob) - pos != w * h:
        raise FormatError(f"expected {w * h} pixel bytes, found {len(blob) - pos}", pos)
    return np.frombuffer(blob, dtype=np.uint8, offset=pos).reshape(h, w).copy()


def read_mask_pgm(path) -> np.ndarray:
    return (read_pgm(path) > 127).astype(np.float64)[None]


def write_png(path, raster: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(raster, dtype=np.uint8)).save(path)


# ----------------------------------------------------------------------
# manifests: one "image<TAB>mask<TAB>seed" line per scene


def write_dataset(root, scenes: list, name: str) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in scenes:
        img = Path("images") / f"{s.seed}.uatn"
        msk = Path("masks") / f"{s.seed}.pgm"
        save_tensor(root / img, s.image.astype(np.float32))
        write_mask_pgm(root / msk, s.mask)
        lines.append(f"{img}\t{msk}\t{s.seed}")
    manifest = root / f"{name}.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(path) -> list:
    path = Path(path)
    scenes = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        img, msk, seed = parts
        image = load_tensor(path.parent / img).astype(np.float64)
        mask = read_mask_pgm(path.parent / msk)
        scenes.append(Scene(image=image, mask=mask, seed=int(seed)))
    return scenes
