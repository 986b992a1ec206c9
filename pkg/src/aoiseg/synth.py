"""Seeded generator of wire-bond-like two-channel scenes with multi-label masks.

Mask geometry uses integer fixed-point arithmetic only (``FP`` sub-units per
pixel, no transcendental functions), so masks are bit-identical across
platforms. Photometric rendering is float32 and never feeds back into masks.

A scene is drawn from one of ``devices`` seeded layouts: an epoxy region
(union of ellipses) around a die, wires running from die pads to outer
leads as thick quadratic curves, ball bonds on the pads and wedge bonds on
the leads. Each scene translates its layout by up to ``shift`` pixels and
jitters wire endpoints, then applies illumination, contrast and noise.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ShiftError, SpecError
from .grid import DEFAULT_PATCH, save_mask, save_raster

FP = 16  # fixed-point sub-units per pixel
WIRE, BALL, WEDGE, EPOXY = range(4)
N_CLASSES = 4
_BEZIER_STEPS = 16


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    side: int = 512
    devices: int = 4
    wires: tuple[int, int] = (5, 9)
    wire_thickness: tuple[int, int] = (3, 6)  # px
    curvature: int = 20  # max bow of a wire, percent of its length
    balls: Optional[tuple[int, int]] = None  # None: one ball per wire
    ball_radius: tuple[int, int] = (6, 9)
    wedges: Optional[tuple[int, int]] = None  # None: one wedge per wire
    wedge_size: tuple[int, int] = (5, 8)
    epoxy: tuple[int, int] = (1, 3)  # blob count
    epoxy_fraction: tuple[float, float] = (0.12, 0.25)  # of the content area
    border: tuple[int, int] = (40, 56)  # px
    shift: int = 32  # px
    jitter: int = 2  # px, per wire endpoint
    contrast_jitter: tuple[float, float] = (0.85, 1.15)
    noise_sigma: tuple[float, float] = (0.01, 0.025)

    def validate(self):
        if self.side < 1 or self.side % DEFAULT_PATCH:
            raise SpecError(f"side {self.side} must be a positive multiple of {DEFAULT_PATCH}")
        for name in ("wires", "wire_thickness", "ball_radius", "wedge_size", "epoxy",
                     "epoxy_fraction", "border", "contrast_jitter", "noise_sigma"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise SpecError(f"{name} range {lo, hi} is invalid")
        for name in ("balls", "wedges"):
            r = getattr(self, name)
            if r is not None and (r[0] > r[1] or r[0] < 0):
                raise SpecError(f"{name} range {r} is invalid")
        if self.devices < 1 or self.shift < 0 or self.jitter < 0:
            raise SpecError("devices must be >= 1 and shift/jitter >= 0")
        if self.content_box()[1] - self.content_box()[0] < 8:
            raise SpecError(f"side {self.side} leaves no room for content inside border and shift")

    def content_box(self) -> tuple[int, int]:
        """Pixel range (lo, hi) that untranslated layouts stay within."""
        m = self.border[1] + self.shift + self.jitter + 2
        return m, self.side - m

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


# -- integer rasterizers -----------------------------------------------------
# All take fixed-point geometry and return (y0, x0, bool block) covering the
# shape's bounding box clipped to the image.

def _centers(lo: int, hi: int) -> np.ndarray:
    return np.arange(lo, hi, dtype=np.int64) * FP + FP // 2


def _bbox(ys, xs, pad, side):
    y0 = max(0, (min(ys) - pad) // FP)
    y1 = min(side, (max(ys) + pad) // FP + 1)
    x0 = max(0, (min(xs) - pad) // FP)
    x1 = min(side, (max(xs) + pad) // FP + 1)
    return y0, y1, x0, x1


def raster_disc(cy, cx, r, side):
    y0, y1, x0, x1 = _bbox([cy], [cx], r, side)
    py, px = _centers(y0, y1)[:, None], _centers(x0, x1)[None, :]
    d2 = (py - cy) ** 2 + (px - cx) ** 2
    return y0, x0, d2 <= r * r, d2


def raster_ellipse(cy, cx, ry, rx, side):
    y0, y1, x0, x1 = _bbox([cy], [cx], max(ry, rx), side)
    py, px = _centers(y0, y1)[:, None], _centers(x0, x1)[None, :]
    lhs = (py - cy) ** 2 * (rx * rx) + (px - cx) ** 2 * (ry * ry)
    return y0, x0, lhs <= (rx * rx) * (ry * ry)


def bezier_points(p0, p1, p2, steps=_BEZIER_STEPS):
    n2 = steps * steps
    pts = []
    for i in range(steps + 1):
        a, b, c = (steps - i) ** 2, 2 * i * (steps - i), i * i
        pts.append(((a * p0[0] + b * p1[0] + c * p2[0]) // n2, (a * p0[1] + b * p1[1] + c * p2[1]) // n2))
    return pts


def raster_polyline(points, r, side):
    """Capsule union around a polyline; also returns min squared distance (float) for shading."""
    ys, xs = [p[0] for p in points], [p[1] for p in points]
    y0, y1, x0, x1 = _bbox(ys, xs, r, side)
    py, px = _centers(y0, y1)[:, None], _centers(x0, x1)[None, :]
    inside = np.zeros((y1 - y0, x1 - x0), bool)
    dist2 = np.full(inside.shape, np.inf)
    r2 = r * r
    for (ay, ax), (by, bx) in zip(points[:-1], points[1:]):
        vy, vx = by - ay, bx - ax
        wy, wx = py - ay, px - ax
        den = vy * vy + vx * vx
        num = wy * vy + wx * vx
        da = wy * wy + wx * wx
        db = (py - by) ** 2 + (px - bx) ** 2
        if den == 0:
            hit = da <= r2
            d2 = da.astype(np.float64)
        else:
            cross = wy * vx - wx * vy
            mid = cross * cross
            hit = np.where(num <= 0, da <= r2, np.where(num >= den, db <= r2, mid <= r2 * den))
            d2 = np.where(num <= 0, da, np.where(num >= den, db, mid / den))
        inside |= hit
        dist2 = np.minimum(dist2, d2)
    return y0, x0, inside, dist2


def raster_convex(vertices, side):
    """Convex polygon in (y, x) of either orientation; boundary pixels count as inside."""
    ys, xs = [v[0] for v in vertices], [v[1] for v in vertices]
    y0, y1, x0, x1 = _bbox(ys, xs, FP, side)
    py, px = _centers(y0, y1)[:, None], _centers(x0, x1)[None, :]
    nonneg = np.ones((y1 - y0, x1 - x0), bool)
    nonpos = nonneg.copy()
    for (ay, ax), (by, bx) in zip(vertices, vertices[1:] + vertices[:1]):
        cr = (by - ay) * (px - ax) - (bx - ax) * (py - ay)
        nonneg &= cr >= 0
        nonpos &= cr <= 0
    return y0, x0, nonneg | nonpos


# -- layout -------------------------------------------------------------------

@dataclass
class Wire:
    start: tuple[int, int]
    control: tuple[int, int]
    end: tuple[int, int]
    radius: int  # FP


@dataclass
class Layout:
    epoxy: list[tuple[int, int, int, int]] = field(default_factory=list)  # cy, cx, ry, rx (FP)
    wires: list[Wire] = field(default_factory=list)
    balls: list[tuple[int, int, int]] = field(default_factory=list)  # cy, cx, r (FP)
    wedges: list[list[tuple[int, int]]] = field(default_factory=list)  # quad vertices (FP)
    shade_dir: tuple[float, float] = (0.6, 0.8)
    gains: tuple[float, float] = (1.0, 0.8)


def _perimeter_point(cy, cx, half, s):
    """Point on the square of half-size ``half`` at perimeter fraction ``s`` in [0, 1) (integers)."""
    q, rem = divmod(s, 1 << 16)
    side4 = q % 4
    t = (2 * half * rem) >> 16
    if side4 == 0:
        return cy - half, cx - half + t
    if side4 == 1:
        return cy - half + t, cx + half
    if side4 == 2:
        return cy + half, cx + half - t
    return cy + half - t, cx - half


def _wedge_quad(end, toward, size):
    """Trapezoid at ``end`` elongated along the incoming wire direction, widest at the far end."""
    vy, vx = end[0] - toward[0], end[1] - toward[1]
    n = math.isqrt(vy * vy + vx * vx) or 1
    half_len = size * FP // 2 + size * FP // 4
    near_w, far_w = size * FP // 4, size * FP // 2
    uy, ux = -vx, vy
    back = (end[0] - vy * half_len // n, end[1] - vx * half_len // n)
    front = (end[0] + vy * half_len // n, end[1] + vx * half_len // n)
    return [
        (back[0] + uy * near_w // n, back[1] + ux * near_w // n),
        (front[0] + uy * far_w // n, front[1] + ux * far_w // n),
        (front[0] - uy * far_w // n, front[1] - ux * far_w // n),
        (back[0] - uy * near_w // n, back[1] - ux * near_w // n),
    ]


def device_layout(spec: SceneSpec, device: int) -> dict:
    """Untranslated integer geometry of one device family."""
    rng = np.random.default_rng([spec.seed, 1, device])
    lo, hi = spec.content_box()
    size = hi - lo
    cy = cx = (lo + hi) * FP // 2
    cy += int(rng.integers(-size // 16, size // 16 + 1)) * FP
    cx += int(rng.integers(-size // 16, size // 16 + 1)) * FP
    die_half = size * FP * int(rng.integers(14, 20)) // 100
    lead_half = size * FP * int(rng.integers(40, 45)) // 100

    n_blobs = int(rng.integers(spec.epoxy[0], spec.epoxy[1] + 1))
    frac = float(rng.uniform(*spec.epoxy_fraction))
    blobs = []
    for b in range(n_blobs):
        area = frac * size * size / n_blobs  # px^2
        aspect = int(rng.integers(70, 141))  # percent
        rx = int(math.sqrt(area * aspect / 100 / math.pi) * FP)
        ry = int(math.sqrt(area * 100 / aspect / math.pi) * FP)
        off = die_half // 2
        by = cy + int(rng.integers(-off, off + 1)) if b else cy
        bx = cx + int(rng.integers(-off, off + 1)) if b else cx
        blobs.append((by, bx, ry, rx))

    n_wires = int(rng.integers(spec.wires[0], spec.wires[1] + 1))
    base = int(rng.integers(0, 1 << 16))
    wires = []
    for i in range(n_wires):
        s = (base + (4 << 16) * i // max(n_wires, 1) + int(rng.integers(-(1 << 12), 1 << 12))) % (4 << 16)
        s_out = (s + int(rng.integers(-(1 << 13), 1 << 13))) % (4 << 16)
        start = _perimeter_point(cy, cx, die_half, s)
        end = _perimeter_point(cy, cx, lead_half, s_out)
        bow = int(rng.integers(-spec.curvature, spec.curvature + 1))
        thick = int(rng.integers(spec.wire_thickness[0], spec.wire_thickness[1] + 1))
        wires.append(dict(start=start, end=end, bow=bow, radius=thick * FP // 2))

    def count(rng_range, default):
        if rng_range is None:
            return default
        return int(rng.integers(rng_range[0], rng_range[1] + 1))

    n_balls = count(spec.balls, n_wires)
    n_wedges = count(spec.wedges, n_wires)
    ball_r = [int(rng.integers(spec.ball_radius[0], spec.ball_radius[1] + 1)) * FP for _ in range(n_balls)]
    wedge_s = [int(rng.integers(spec.wedge_size[0], spec.wedge_size[1] + 1)) for _ in range(n_wedges)]
    # bonds without a wire sit on the die / lead rings at random perimeter positions
    free_balls = [_perimeter_point(cy, cx, die_half, int(rng.integers(0, 4 << 16)))
                  for _ in range(max(0, n_balls - n_wires))]
    free_wedges = [_perimeter_point(cy, cx, lead_half, int(rng.integers(0, 4 << 16)))
                   for _ in range(max(0, n_wedges - n_wires))]
    ang = float(rng.uniform(0, 2 * np.pi))
    return dict(
        blobs=blobs, wires=wires, ball_r=ball_r, wedge_s=wedge_s,
        free_balls=free_balls, free_wedges=free_wedges, center=(cy, cx),
        shade_dir=(float(np.cos(ang)), float(np.sin(ang))),
        gains=(float(rng.uniform(0.9, 1.1)), float(rng.uniform(0.6, 0.85))),
    )


def scene_layout(spec: SceneSpec, index: int) -> tuple[Layout, np.random.Generator]:
    spec.validate()
    rng = np.random.default_rng([spec.seed, 2, index])
    dev = device_layout(spec, int(rng.integers(0, spec.devices)))
    dy = int(rng.integers(-spec.shift, spec.shift + 1)) * FP
    dx = int(rng.integers(-spec.shift, spec.shift + 1)) * FP
    j = spec.jitter * FP

    def mv(p, jit=0):
        if jit:
            return p[0] + dy + int(rng.integers(-jit, jit + 1)), p[1] + dx + int(rng.integers(-jit, jit + 1))
        return p[0] + dy, p[1] + dx

    lay = Layout(shade_dir=dev["shade_dir"], gains=dev["gains"])
    lay.epoxy = [(by + dy, bx + dx, ry, rx) for by, bx, ry, rx in dev["blobs"]]
    for w in dev["wires"]:
        start, end = mv(w["start"], j), mv(w["end"], j)
        vy, vx = end[0] - start[0], end[1] - start[1]
        control = ((start[0] + end[0]) // 2 - vx * w["bow"] // 100, (start[1] + end[1]) // 2 + vy * w["bow"] // 100)
        lay.wires.append(Wire(start, control, end, w["radius"]))
    for i, r in enumerate(dev["ball_r"]):
        c = lay.wires[i].start if i < len(lay.wires) else mv(dev["free_balls"][i - len(lay.wires)])
        lay.balls.append((c[0], c[1], r))
    for i, s in enumerate(dev["wedge_s"]):
        if i < len(lay.wires):
            w = lay.wires[i]
            lay.wedges.append(_wedge_quad(w.end, w.control, s))
        else:
            e = mv(dev["free_wedges"][i - len(lay.wires)])
            ctr = mv(dev["center"])
            lay.wedges.append(_wedge_quad(e, ctr, s))
    return lay, rng


def render_layers(spec: SceneSpec, layout: Layout, tex_rng: np.random.Generator):
    """Yield ``(class, mask, intensity)`` full-size layers, one per structure, in paint order.

    ``intensity`` is positive exactly on ``mask``.
    """
    side = spec.side
    # low-frequency texture for epoxy, blocks of 16 px
    tex = np.kron(tex_rng.uniform(-1, 1, (side // 16, side // 16)), np.ones((16, 16))).astype(np.float32)
    for cy, cx, ry, rx in layout.epoxy:
        y0, x0, m = raster_ellipse(cy, cx, ry, rx, side)
        yield EPOXY, *_full(side, y0, x0, m, np.float32(0.32) + np.float32(0.06) * tex[y0:y0 + m.shape[0], x0:x0 + m.shape[1]])
    for w in layout.wires:
        pts = bezier_points(w.start, w.control, w.end)
        y0, x0, m, d2 = raster_polyline(pts, w.radius, side)
        prof = 1.0 - np.minimum(d2 / float(w.radius * w.radius), 1.0)
        yield WIRE, *_full(side, y0, x0, m, (0.55 + 0.4 * prof).astype(np.float32))
    for cy, cx, r in layout.balls:
        y0, x0, m, d2 = raster_disc(cy, cx, r, side)
        prof = 1.0 - np.minimum(d2 / float(r * r), 1.0)
        yield BALL, *_full(side, y0, x0, m, (0.7 + 0.25 * prof).astype(np.float32))
    for quad in layout.wedges:
        y0, x0, m = raster_convex(quad, side)
        yield WEDGE, *_full(side, y0, x0, m, np.full(m.shape, 0.85, np.float32))


def _full(side, y0, x0, m, vals):
    mask = np.zeros((side, side), bool)
    inten = np.zeros((side, side), np.float32)
    h, w = m.shape
    mask[y0:y0 + h, x0:x0 + w] = m
    inten[y0:y0 + h, x0:x0 + w] = np.where(m, vals, 0)
    return mask, inten


def generate_scene(spec: SceneSpec, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic ``(raster (side, side, 2) float32, mask (side, side, 4) bool)`` for one index."""
    layout, rng = scene_layout(spec, index)
    side = spec.side
    mask = np.zeros((side, side, N_CLASSES), bool)
    composite = np.zeros((side, side), np.float32)
    for cls, m, inten in render_layers(spec, layout, rng):
        mask[:, :, cls] |= m
        composite = np.where(m, inten, composite)
    border = int(rng.integers(spec.border[0], spec.border[1] + 1))
    contrast = np.float32(rng.uniform(*spec.contrast_jitter))
    sigma = float(rng.uniform(*spec.noise_sigma))
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float32) / np.float32(max(side - 1, 1))
    sy, sx = layout.shade_dir
    shade = np.float32(0.75) + np.float32(0.25) * (yy * np.float32(sy) + xx * np.float32(sx))
    g1, g2 = layout.gains
    img = np.stack([composite * np.float32(g1), composite * np.float32(g2) * shade], axis=2) * contrast
    interior = np.zeros((side, side), bool)
    interior[border:side - border, border:side - border] = True
    img[~interior] = 0
    mask &= interior[:, :, None]
    if sigma > 0:
        img = img + rng.normal(0.0, sigma, img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask


def perturb(img: np.ndarray, mask: Optional[np.ndarray] = None, shift=(0, 0), contrast: float = 1.0,
            noise_sigma: float = 0.0, seed: int = 0, border: Optional[int] = None):
    """Translate (zero fill), rescale contrast about the image mean, add clipped Gaussian noise.

    Raises :class:`ShiftError` if the shift would push labeled pixels off the
    raster, or if it is not smaller than ``border`` when that is given.
    """
    dy, dx = int(shift[0]), int(shift[1])
    h, w = img.shape[:2]
    if border is not None and (abs(dy) >= border or abs(dx) >= border):
        raise ShiftError(f"shift {(dy, dx)} is not smaller than the border width {border}")
    if abs(dy) >= h or abs(dx) >= w:
        raise ShiftError(f"shift {(dy, dx)} exceeds the raster")

    def translate(a):
        out = np.zeros_like(a)
        src = a[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
        out[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
        return out

    out_mask = None
    if mask is not None:
        out_mask = translate(mask)
        if np.count_nonzero(out_mask) != np.count_nonzero(mask):
            raise ShiftError(f"shift {(dy, dx)} clips labeled content")
    out = translate(img) if (dy or dx) else img.copy()
    if contrast != 1.0:
        center = out.mean(axis=(0, 1), keepdims=True)
        out = (out - center) * np.float32(contrast) + center
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, noise_sigma, out.shape).astype(np.float32)
    if contrast != 1.0 or noise_sigma > 0:
        out = np.clip(out, 0.0, 1.0)
    return out.astype(np.float32), out_mask


# -- datasets -------------------------------------------------------------------

MANIFEST_HEADER = "id\traster\tmask"


def scene_id(index: int) -> str:
    return f"scene_{index:05d}"


def generate_dataset(spec: SceneSpec, n: int, out_dir, start: int = 0) -> list[tuple[str, str, str]]:
    """Write ``n`` AOIR/AOIM pairs and ``manifest.tsv``; returns the manifest rows."""
    if n < 1:
        raise SpecError(f"n must be >= 1, got {n}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(start, start + n):
        img, mask = generate_scene(spec, i)
        ident = scene_id(i)
        save_raster(img, out / f"{ident}.aoir")
        save_mask(mask, out / f"{ident}.aoim")
        rows.append((ident, f"{ident}.aoir", f"{ident}.aoim"))
    write_manifest(out / "manifest.tsv", rows)
    return rows


def write_manifest(path, rows) -> None:
    lines = [MANIFEST_HEADER] + ["\t".join(r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[tuple[str, Path, Path]]:
    """Manifest rows with raster/mask paths resolved against the manifest's directory."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise SpecError(f"{path}: manifest must start with the header {MANIFEST_HEADER!r}")
    rows = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        ident, r, m = ln.split("\t")
        rows.append((ident, path.parent / r, path.parent / m))
    return rows


def split_rows(rows, n_first: int):
    return rows[:n_first], rows[n_first:]


def with_overrides(spec: SceneSpec, **kw) -> SceneSpec:
    return replace(spec, **kw)
