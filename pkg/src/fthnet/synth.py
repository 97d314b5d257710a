"""Synthetic degraded pseudo-fundus images for desk-scale verification.

Each image is a circular disc on black: a smooth reddish background,
dark vessel-like curves, a bright disc spot, and fine speckle texture.
Four degradations with severities in [0, 1] are applied on top: gaussian
blur, haze, an illumination gradient, and global darkening. The label is
a deterministic pseudo-MOS computed from the severities, strictly
decreasing in each of them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .dataset import SampleRecord, level_from_score, write_manifest

# Severity mix: blur dominates, mirroring which degradations hurt
# clinical reading the most.
SEVERITY_WEIGHTS = {"blur_sigma": 0.40, "haze_alpha": 0.25,
                    "illum_gradient": 0.20, "darkness": 0.15}
MOS_DROP = 70.0

HAZE_COLOR = np.array([0.84, 0.82, 0.78], dtype=np.float32)


@dataclass(frozen=True)
class DegradationSpec:
    blur_sigma: float = 0.0
    haze_alpha: float = 0.0
    illum_gradient: float = 0.0
    darkness: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in SEVERITY_WEIGHTS:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"severity {name}={v} outside [0, 1]")

    def severity(self) -> float:
        return sum(w * getattr(self, k) for k, w in SEVERITY_WEIGHTS.items())


def pseudo_mos(spec: DegradationSpec) -> float:
    """clamp(100 - 70 * weighted severity, 0, 100)."""
    return float(np.clip(100.0 - MOS_DROP * spec.severity(), 0.0, 100.0))


def _smooth_field(rng: np.random.Generator, size: int, coarse: int,
                  lo: float, hi: float) -> np.ndarray:
    """Bilinear upsample of a coarse random grid; values in [lo, hi]."""
    grid = rng.uniform(lo, hi, size=(coarse + 1, coarse + 1))
    t = np.linspace(0.0, coarse, size)
    i0 = np.clip(t.astype(int), 0, coarse - 1)
    frac = t - i0
    rows = (grid[i0, :] * (1 - frac)[:, None] + grid[i0 + 1, :] * frac[:, None])
    cols = (rows[:, i0] * (1 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :])
    return cols.astype(np.float32)


def _disc_mask(size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    c = (size - 1) / 2.0
    r = 0.47 * size
    return ((xx - c) ** 2 + (yy - c) ** 2 <= r * r).astype(np.float32)


def render_clean(rng: np.random.Generator, size: int) -> np.ndarray:
    """Clean pseudo-fundus, float32 HxWx3 in [0, 1]."""
    base = np.stack([
        _smooth_field(rng, size, 6, 0.62, 0.92),   # red
        _smooth_field(rng, size, 6, 0.28, 0.52),   # green
        _smooth_field(rng, size, 6, 0.10, 0.24),   # blue
    ], axis=-1)

    # bright disc spot (optic-disc proxy), offset from the centre
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    cx = size * rng.uniform(0.32, 0.68)
    cy = size * rng.uniform(0.38, 0.62)
    rr = size * rng.uniform(0.05, 0.08)
    spot = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * rr * rr)))
    base = base + spot[..., None] * np.array([0.18, 0.25, 0.22], dtype=np.float32)

    # vessel proxies: dark random-walk curves radiating from the spot
    vessels = np.zeros((size, size), dtype=np.float32)
    for _ in range(int(rng.integers(7, 12))):
        x, y = float(cx), float(cy)
        angle = float(rng.uniform(0, 2 * np.pi))
        for _ in range(int(size * 1.2)):
            angle += float(rng.normal(0.0, 0.18))
            x += np.cos(angle)
            y += np.sin(angle)
            xi, yi = int(round(x)), int(round(y))
            if not (0 <= xi < size and 0 <= yi < size):
                break
            vessels[yi, xi] = 1.0
    width = max(0.6, size / 420.0)
    vessels = np.clip(gaussian_filter(vessels, width) * 2.4, 0.0, 1.0)
    base = base * (1.0 - 0.55 * vessels[..., None])

    # fine speckle so that blur measurably removes high frequencies
    speckle = rng.normal(0.0, 0.035, size=(size, size, 1)).astype(np.float32)
    base = base + speckle

    return np.clip(base * _disc_mask(size)[..., None], 0.0, 1.0)


def apply_degradations(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply the four degradations; input and output are float32 in [0, 1]."""
    size = img.shape[0]
    mask = _disc_mask(size)[..., None]
    out = img.astype(np.float32)

    if spec.blur_sigma > 0:
        sigma = spec.blur_sigma * size / 32.0
        out = gaussian_filter(out, sigma=(sigma, sigma, 0.0))

    if spec.haze_alpha > 0:
        blend = 0.6 * spec.haze_alpha
        out = out * (1.0 - blend) + HAZE_COLOR * blend

    if spec.illum_gradient > 0:
        rng = np.random.default_rng(spec.seed)
        angle = float(rng.uniform(0, 2 * np.pi))
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / (size - 1)
        ramp = (xx * np.cos(angle) + yy * np.sin(angle))
        ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-6)
        out = out * (1.0 - 0.8 * spec.illum_gradient * ramp)[..., None]

    if spec.darkness > 0:
        out = out * (1.0 - 0.65 * spec.darkness)

    return np.clip(out * mask, 0.0, 1.0)


def sample_spec(rng: np.random.Generator, index: int) -> DegradationSpec:
    return DegradationSpec(
        blur_sigma=float(rng.uniform(0, 1)),
        haze_alpha=float(rng.uniform(0, 1)),
        illum_gradient=float(rng.uniform(0, 1)),
        darkness=float(rng.uniform(0, 1)),
        seed=index,
    )


def synth_generate(n: int, out_dir: str | Path, seed: int = 0,
                   image_size: int = 256) -> list[SampleRecord]:
    """Write ``n`` degraded images plus manifest.csv into ``out_dir``.

    Fully deterministic given (n, seed, image_size): same seed, same
    bytes. Severity specs are kept in degradations.json for inspection.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    records: list[SampleRecord] = []
    specs: list[dict] = []
    for i in range(n):
        spec = sample_spec(rng, index=i)
        img = apply_degradations(render_clean(rng, image_size), spec)
        mos = pseudo_mos(spec)
        rel = f"images/img_{i:05d}.png"
        arr = np.round(img * 255.0).astype(np.uint8)
        Image.fromarray(arr).save(out_dir / rel, format="PNG")
        records.append(SampleRecord(rel, mos, level_from_score(mos)))
        specs.append(asdict(spec))

    write_manifest(records, out_dir / "manifest.csv")
    (out_dir / "degradations.json").write_text(json.dumps(specs, indent=2) + "\n",
                                               encoding="utf-8")
    return records
