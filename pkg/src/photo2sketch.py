#!/usr/bin/env python3
"""
Photo-to-Sketch Pipeline
Edge-map raster -> thinned skeleton -> traced polylines -> distorted
vector sketch -> arc-length resampling -> abstraction by the agent.

Pixel coordinates follow x = column, y = row.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from .agent import AbstractionResult, AgentModel, abstract
from .corpus import Corpus
from .errors import ArgumentError, FormatError
from .sketch import VectorSketch, bounding_box, from_polylines, normalize, rasterize, to_absolute

logger = logging.getLogger(__name__)

Pixel = Tuple[int, int]

_N4 = ((-1, 0), (0, -1), (0, 1), (1, 0))
_DIAGONAL = ((-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass(frozen=True)
class RasterImage:
    """Grayscale raster, pixels[row, col] in 0..255"""
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2 or pixels.size == 0:
            raise ArgumentError(f"raster must be a non-empty 2-D array, got shape {pixels.shape}")
        if pixels.min() < 0 or pixels.max() > 255:
            raise ArgumentError("raster values must lie in [0, 255]")
        object.__setattr__(self, 'pixels', pixels.astype(np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view"""
        return self.pixels.reshape(-1)


# ----------------------------------------------------------------------------
# PGM files
# ----------------------------------------------------------------------------

def _pgm_header(data: bytes) -> Tuple[List[bytes], int]:
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b'#':
            while pos < len(data) and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b'#':
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def load_pgm(path) -> RasterImage:
    """Plain (P2) or binary (P5) PGM; values rescaled to 0..255 when maxval differs"""
    data = Path(path).read_bytes()
    tokens, offset = _pgm_header(data)
    magic = tokens[0]
    if magic not in (b'P2', b'P5'):
        raise FormatError(f"{path}: unsupported magic {magic!r}, expected P2 or P5")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise FormatError(f"{path}: bad PGM header ({e})") from e
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad PGM dimensions {width}x{height} maxval {maxval}")

    n = width * height
    if magic == b'P5':
        dtype = np.dtype('u1') if maxval < 256 else np.dtype('>u2')
        body = data[offset:offset + n * dtype.itemsize]
        if len(body) < n * dtype.itemsize:
            raise FormatError(f"{path}: expected {n} pixels, file is truncated")
        values = np.frombuffer(body, dtype=dtype).astype(np.int64)
    else:
        try:
            values = np.array([int(t) for t in data[offset - 1:].split()[:n]], dtype=np.int64)
        except ValueError as e:
            raise FormatError(f"{path}: non-numeric pixel value ({e})") from e
        if len(values) < n:
            raise FormatError(f"{path}: expected {n} pixels, found {len(values)}")
    if values.max(initial=0) > maxval:
        raise FormatError(f"{path}: pixel value above maxval {maxval}")
    if maxval != 255:
        values = np.rint(values * 255.0 / maxval).astype(np.int64)
    return RasterImage(values.reshape(height, width))


def write_pgm(path, raster: RasterImage) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    header = f"P5\n{raster.width} {raster.height}\n255\n".encode('ascii')
    Path(path).write_bytes(header + raster.pixels.astype(np.uint8).tobytes())


def binarize(raster: RasterImage, threshold: int = 128) -> RasterImage:
    return RasterImage(np.where(raster.pixels >= threshold, 255, 0))


# ----------------------------------------------------------------------------
# thinning and tracing
# ----------------------------------------------------------------------------

def thin(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning of a boolean mask, both sub-iterations vectorized"""
    img = np.pad(np.asarray(mask, dtype=bool), 1).astype(np.uint8)
    while True:
        changed = False
        for sub in (0, 1):
            p2, p3, p4 = img[:-2, 1:-1], img[:-2, 2:], img[1:-1, 2:]
            p5, p6, p7 = img[2:, 2:], img[2:, 1:-1], img[2:, :-2]
            p8, p9 = img[1:-1, :-2], img[:-2, :-2]
            ring = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
            B = sum(p.astype(np.int32) for p in ring[:8])
            A = sum(((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.int32) for i in range(8))
            if sub == 0:
                m1, m2 = p2 * p4 * p6, p4 * p6 * p8
            else:
                m1, m2 = p2 * p4 * p8, p2 * p6 * p8
            remove = (img[1:-1, 1:-1] == 1) & (B >= 2) & (B <= 6) & (A == 1) & (m1 == 0) & (m2 == 0)
            if remove.any():
                img[1:-1, 1:-1][remove] = 0
                changed = True
        if not changed:
            return img[1:-1, 1:-1].astype(bool)


def _neighbours(skeleton: np.ndarray, r: int, c: int) -> List[Pixel]:
    """m-adjacency: a diagonal neighbour only counts without a shared 4-neighbour"""
    h, w = skeleton.shape

    def on(rr, cc):
        return 0 <= rr < h and 0 <= cc < w and skeleton[rr, cc]

    out = [(r + dr, c + dc) for dr, dc in _N4 if on(r + dr, c + dc)]
    out += [(r + dr, c + dc) for dr, dc in _DIAGONAL
            if on(r + dr, c + dc) and not on(r + dr, c) and not on(r, c + dc)]
    return out


def _junction_clusters(junctions: Set[Pixel],
                       nbrs: Dict[Pixel, List[Pixel]]) -> Tuple[Dict[Pixel, int], List[List[Pixel]], List[Pixel]]:
    cluster_of: Dict[Pixel, int] = {}
    members: List[List[Pixel]] = []
    reps: List[Pixel] = []
    for seed in sorted(junctions):
        if seed in cluster_of:
            continue
        cid = len(members)
        group, stack = [], [seed]
        cluster_of[seed] = cid
        while stack:
            p = stack.pop()
            group.append(p)
            for n in nbrs[p]:
                if n in junctions and n not in cluster_of:
                    cluster_of[n] = cid
                    stack.append(n)
        group.sort()
        centroid = np.mean(group, axis=0)
        reps.append(min(group, key=lambda p: (np.hypot(p[0] - centroid[0], p[1] - centroid[1]), p)))
        members.append(group)
    return cluster_of, members, reps


def trace(raster: RasterImage) -> List[np.ndarray]:
    """
    Skeletonize the foreground and split the skeleton graph into paths
    between endpoints and junctions (degree >= 3). Each junction cluster is
    represented by one pixel that every path touching it starts or ends at.
    Returns (x, y) polylines with at least two points.
    """
    skeleton = thin(raster.pixels > 0)
    pixels = [(int(r), int(c)) for r, c in np.argwhere(skeleton)]
    nbrs = {p: _neighbours(skeleton, *p) for p in pixels}
    junctions = {p for p in pixels if len(nbrs[p]) >= 3}
    cluster_of, members, reps = _junction_clusters(junctions, nbrs)
    visited: Set[Pixel] = set(junctions)

    def walk(path: List[Pixel], start_cluster: Optional[int]) -> List[Pixel]:
        while True:
            here = path[-1]
            step = next((n for n in nbrs[here] if n not in visited), None)
            if step is not None:
                visited.add(step)
                path.append(step)
                continue
            for n in nbrs[here]:
                if n in junctions and (cluster_of[n] != start_cluster or len(path) > 3):
                    path.append(n)
                    rep = reps[cluster_of[n]]
                    if rep != n:
                        path.append(rep)
                    break
            return path

    paths: List[List[Pixel]] = []
    for cid, group in enumerate(members):
        rep = reps[cid]
        for j in group:
            for n in nbrs[j]:
                if n in visited:
                    continue
                visited.add(n)
                paths.append(walk([rep] + ([j] if j != rep else []) + [n], cid))

    for p in pixels:
        if p not in visited and len(nbrs[p]) == 1:
            visited.add(p)
            paths.append(walk([p], None))

    # closed loops without endpoints or junctions
    for p in pixels:
        if p not in visited and nbrs[p]:
            visited.add(p)
            path = walk([p], None)
            if len(path) >= 3 and p in nbrs[path[-1]]:
                path.append(p)
            paths.append(path)

    polylines = [np.array([(c, r) for r, c in path], dtype=np.float64) for path in paths if len(path) >= 2]
    logger.debug(f"Traced {len(polylines)} polylines from {len(pixels)} skeleton pixels")
    return polylines


# ----------------------------------------------------------------------------
# distortion and resampling
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class DistortionParams:
    """Ranges are (low, high); translations and jitter are fractions of the bounding-box size"""
    rotation: Tuple[float, float] = (-np.deg2rad(5.0), np.deg2rad(5.0))
    translation: Tuple[float, float] = (-0.02, 0.02)
    scale: Tuple[float, float] = (0.95, 1.05)
    skew_x: Tuple[float, float] = (-0.05, 0.05)
    skew_y: Tuple[float, float] = (-0.05, 0.05)
    stroke_translation: Tuple[float, float] = (-0.01, 0.01)
    curvature_jitter_amp: float = 0.01
    curvature_jitter_wavelength: float = 0.25
    seed: int = 0

    @classmethod
    def identity(cls) -> 'DistortionParams':
        zero = (0.0, 0.0)
        return cls(rotation=zero, translation=zero, scale=(1.0, 1.0), skew_x=zero, skew_y=zero,
                   stroke_translation=zero, curvature_jitter_amp=0.0)

    def validate(self) -> None:
        for name in ('rotation', 'translation', 'scale', 'skew_x', 'skew_y', 'stroke_translation'):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ArgumentError(f"distortion range {name}=({lo}, {hi}) is invalid")
        if self.scale[0] <= 0:
            raise ArgumentError("scale range must be positive")
        if self.curvature_jitter_amp < 0 or self.curvature_jitter_wavelength <= 0:
            raise ArgumentError("jitter amplitude must be >= 0 and wavelength > 0")


def _arc_length(points: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])


def distort(sketch: VectorSketch, params: DistortionParams, rng: np.random.Generator) -> VectorSketch:
    """
    Global rotate -> skew -> scale -> translate about the bounding-box
    centre, then per-stroke translation and sinusoidal jitter along the
    stroke normal.
    """
    params.validate()
    if sketch.is_empty:
        return sketch
    box = bounding_box(sketch)
    size = box.size if box.size > 0 else 1.0
    center = np.array(box.center)

    theta = rng.uniform(*params.rotation)
    kx, ky = rng.uniform(*params.skew_x), rng.uniform(*params.skew_y)
    s = rng.uniform(*params.scale)
    shift = rng.uniform(*params.translation, size=2) * size
    rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    skew = np.array([[1.0, kx], [ky, 1.0]])
    affine = s * skew @ rotation

    xy = (to_absolute(sketch)[:, :2] - center) @ affine.T + center + shift
    pens = sketch.points[:, 2]
    ends = np.flatnonzero(pens == 1)
    wavelength = params.curvature_jitter_wavelength * size
    start = 0
    for end in ends:
        stroke = xy[start:end + 1]
        offset = rng.uniform(*params.stroke_translation, size=2) * size
        amp = rng.uniform(0.0, params.curvature_jitter_amp) * size
        phase = rng.uniform(0.0, 2 * np.pi)
        moved = stroke + offset
        if len(stroke) >= 2 and amp > 0:
            tangent = np.gradient(stroke, axis=0)
            norm = np.linalg.norm(tangent, axis=1, keepdims=True)
            normal = np.divide(np.column_stack([-tangent[:, 1], tangent[:, 0]]), norm,
                               out=np.zeros_like(tangent), where=norm > 0)
            wave = amp * np.sin(2 * np.pi * _arc_length(stroke) / wavelength + phase)
            moved = moved + wave[:, None] * normal
        xy[start:end + 1] = moved
        start = end + 1

    offsets = np.diff(xy, axis=0, prepend=np.zeros((1, 2)))
    return sketch.with_points(np.column_stack([offsets, pens]))


def resample(sketch: VectorSketch, step_length: float) -> VectorSketch:
    """Re-mark every stroke at arc-length multiples of step_length, endpoints kept"""
    if step_length <= 0:
        raise ArgumentError("step_length must be > 0")
    strokes = []
    for stroke in sketch.strokes():
        if len(stroke) == 1:
            strokes.append(stroke)
            continue
        arc = _arc_length(stroke)
        total = arc[-1]
        at = step_length * np.arange(int(np.floor(total / step_length + 1e-9)) + 1)
        if total - at[-1] > 1e-9 * max(1.0, total):
            at = np.append(at, total)
        else:
            at[-1] = total
        if len(at) == 1:
            at = np.array([0.0, total])
        strokes.append(np.column_stack([np.interp(at, arc, stroke[:, 0]), np.interp(at, arc, stroke[:, 1])]))
    return from_polylines(strokes, label=sketch.label, category=sketch.category, key=sketch.key)


# ----------------------------------------------------------------------------
# pipeline
# ----------------------------------------------------------------------------

@dataclass
class PhotoSketchResult:
    vectorized: VectorSketch
    distorted: VectorSketch
    simplified: VectorSketch
    abstraction: AbstractionResult

    @property
    def sketch(self) -> VectorSketch:
        return self.abstraction.sketch

    def stages(self) -> Dict[str, VectorSketch]:
        return {'vectorized': self.vectorized, 'distorted': self.distorted,
                'simplified': self.simplified, 'abstracted': self.sketch}


def vectorize(raster: RasterImage, threshold: int = 128, **meta) -> VectorSketch:
    polylines = trace(binarize(raster, threshold))
    if not polylines:
        raise ArgumentError("no strokes traced")
    return from_polylines(polylines, **meta)


def simplify(sketch: VectorSketch, params: DistortionParams, step_length: float,
             rng: np.random.Generator) -> Tuple[VectorSketch, VectorSketch]:
    """(distorted, resampled-and-normalized)"""
    distorted = distort(sketch, params, rng)
    return distorted, normalize(resample(distorted, step_length))


def photo_to_sketch(raster: RasterImage, agent: AgentModel, delta: float, params: DistortionParams,
                    rng: np.random.Generator, step_length: float = 5.0, threshold: int = 128) -> PhotoSketchResult:
    vectorized = vectorize(raster, threshold)
    distorted, simplified = simplify(vectorized, params, step_length, rng)
    return PhotoSketchResult(vectorized, distorted, simplified, abstract(agent, simplified, delta, rng))


def photo_variants(raster: RasterImage, agent: AgentModel, delta: float, params: DistortionParams,
                   variants: int = 5, step_length: float = 5.0, threshold: int = 128,
                   workers: int = 1) -> List[PhotoSketchResult]:
    """One result per distortion variant, each with its own seed derived from params.seed"""
    if workers < 1:
        raise ArgumentError("workers must be >= 1")
    children = np.random.SeedSequence(params.seed).spawn(variants)

    def run(child: np.random.SeedSequence) -> PhotoSketchResult:
        return photo_to_sketch(raster, agent, delta, params, np.random.default_rng(child), step_length, threshold)

    if workers == 1:
        return [run(child) for child in children]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(run, children))


def render_edge_raster(sketch: VectorSketch, size: int = 64, thickness: int = 1) -> RasterImage:
    """Synthetic edge map: the sketch drawn in white on black"""
    ink = rasterize(sketch, size).astype(bool)
    if thickness > 1:
        grown = ink.copy()
        reach = range(-(thickness // 2), thickness - thickness // 2)
        for dr in reach:
            for dc in reach:
                grown |= np.roll(np.roll(ink, dr, axis=0), dc, axis=1)
        ink = grown
    return RasterImage(np.where(ink, 255, 0))


def build_edge_corpus(corpus: Corpus, params: DistortionParams, step_length: float = 5.0,
                      size: int = 64, seed: int = 0) -> Corpus:
    """
    Fine-tuning data: every sketch rendered to an edge raster, traced,
    distorted, resampled and normalized, keeping label and split.
    """
    sketches, split = [], []
    for i, (sketch, tag) in enumerate(zip(corpus.sketches, corpus.split)):
        try:
            vector = vectorize(render_edge_raster(sketch, size), label=sketch.label,
                               category=sketch.category, key=sketch.key)
        except ArgumentError:
            logger.warning(f"Sketch {i}: nothing traced from its edge raster, skipped")
            continue
        _, simplified = simplify(vector, params, step_length, np.random.default_rng([seed, i]))
        sketches.append(simplified)
        split.append(tag)
    edge = Corpus(sketches, list(corpus.class_names), split)
    edge.validate()
    logger.info(f"Built edge corpus: {len(sketches)} of {len(corpus.sketches)} sketches traced")
    return edge
