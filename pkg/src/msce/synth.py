"""Synthetic fundus-like images with a labelled dark fovea.

Each image is a bright circular fundus on a dark frame, a bright optic-disc
blob and a dark fovea whose centre is snapped to a pixel centre. The fovea
is applied multiplicatively, ``base * (1 - G)``, so before noise its centre
pixel is exactly zero and therefore the unique image minimum.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from msce import io

MAGIC = b"MSCE1"
MAX_ATTEMPTS = 1000
MIN_SEPARATION = 0.2  # disc-fovea distance, fraction of S


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    size: int = 64
    count: int = 100
    seed: int = 0
    fovea_radius: tuple[float, float] = (0.04, 0.08)
    disc_radius: tuple[float, float] = (0.08, 0.12)
    noise: float = 0.05
    margin: float = 0.1
    hard: bool = False

    def __post_init__(self):
        object.__setattr__(self, "fovea_radius", tuple(map(float, self.fovea_radius)))
        object.__setattr__(self, "disc_radius", tuple(map(float, self.disc_radius)))
        if self.size < 4:
            raise ValueError(f"size must be >= 4, got {self.size}")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        for name in ("fovea_radius", "disc_radius"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi < 0.5:
                raise ValueError(f"{name} must satisfy 0 < lo <= hi < 0.5, got {(lo, hi)}")
        if not 0 < self.margin < 0.5:
            raise ValueError(f"margin must lie in (0, 0.5), got {self.margin}")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fovea_radius"] = list(self.fovea_radius)
        d["disc_radius"] = list(self.disc_radius)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)


def class_of(g, num_classes: int):
    """Bucket a normalized coordinate into one of ``num_classes`` classes."""
    idx = np.minimum(np.floor(np.asarray(g) * num_classes), num_classes - 1).astype(np.int64)
    return idx[()]


@dataclass(frozen=True)
class CoordLabel:
    gx: float
    gy: float

    def class_of(self, axis: str, num_classes: int) -> int:
        return int(class_of(self.gx if axis == "x" else self.gy, num_classes))


@dataclass
class Sample:
    image: np.ndarray  # (1, S, S)
    label: CoordLabel
    disc: tuple[float, float] | None = None  # generator metadata, not serialized

    def __eq__(self, other):
        return (isinstance(other, Sample) and self.label == other.label
                and self.image.shape == other.image.shape
                and self.image.tobytes() == other.image.tobytes())


def _pixel_range(spec: SynthSpec, lo: float, hi: float) -> tuple[int, int]:
    s = spec.size
    first = int(np.ceil(lo * s - 0.5))
    last = int(np.floor(hi * s - 0.5))
    if first > last:
        raise GenerationError(f"no pixel centre in [{lo}, {hi}] at size {s}")
    return first, last


def _fovea_pixel(spec: SynthSpec, rng: np.random.Generator) -> tuple[int, int]:
    lo, hi = _pixel_range(spec, spec.margin, 1 - spec.margin)
    if not spec.hard:
        return int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
    # hard mode: fovea hugs one border, where the fundus darkens
    band = max(1, int(round(0.05 * spec.size)))
    near = int(rng.integers(lo, min(lo + band, hi) + 1))
    far = int(rng.integers(lo, hi + 1))
    side = int(rng.integers(4))
    near = near if side % 2 == 0 else lo + hi - near
    return (near, far) if side < 2 else (far, near)


def _render(spec: SynthSpec, rng: np.random.Generator, index: int) -> Sample:
    s = spec.size
    coords = (np.arange(s) + 0.5) / s
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    fx_i, fy_i = _fovea_pixel(spec, rng)
    fx, fy = (fx_i + 0.5) / s, (fy_i + 0.5) / s
    for _ in range(MAX_ATTEMPTS):
        if spec.hard:
            dx, dy = rng.uniform(0.35, 0.65, size=2)
        else:
            dx, dy = rng.uniform(spec.margin, 1 - spec.margin, size=2)
        if np.hypot(dx - fx, dy - fy) >= MIN_SEPARATION:
            break
    else:
        raise GenerationError(f"sample {index}: no disc position >= {MIN_SEPARATION}*S from the fovea "
                              f"after {MAX_ATTEMPTS} attempts")
    r_fovea = rng.uniform(*spec.fovea_radius)
    r_disc = rng.uniform(*spec.disc_radius)

    radius = np.hypot(xx - 0.5, yy - 0.5)
    base = 0.1 + 0.6 / (1.0 + np.exp((radius - 0.45) / 0.03))
    base += 0.35 * np.exp(-((xx - dx) ** 2 + (yy - dy) ** 2) / (2 * r_disc ** 2))
    np.minimum(base, 1.0, out=base)
    fovea = np.exp(-((xx - fx) ** 2 + (yy - fy) ** 2) / (2 * r_fovea ** 2))
    img = base * (1.0 - fovea)
    if spec.noise > 0:
        img = np.clip(img + rng.normal(0.0, spec.noise, size=img.shape), 0.0, 1.0)
    return Sample(image=img[None], label=CoordLabel(float(fx), float(fy)), disc=(float(dx), float(dy)))


def generate(spec: SynthSpec) -> list[Sample]:
    """Sample ``spec.count`` images; sample i draws from its own (seed, i) stream."""
    return [_render(spec, np.random.default_rng(np.random.SeedSequence([spec.seed, i])), i)
            for i in range(spec.count)]


def stack(dataset: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Images ``(N, 1, S, S)`` and labels ``(N, 2)`` as arrays."""
    images = np.stack([smp.image for smp in dataset])
    labels = np.array([[smp.label.gx, smp.label.gy] for smp in dataset])
    return images, labels


def save(dataset: list[Sample], path, spec: SynthSpec | None = None) -> None:
    if not dataset:
        raise ValueError("cannot save an empty dataset")
    s = dataset[0].image.shape[-1]
    chunks = [MAGIC, io.u32(s), io.u32(len(dataset)),
              io.json_block(spec.to_dict() if spec is not None else {})]
    for smp in dataset:
        if smp.image.shape != (1, s, s):
            raise io.SizeMismatchError(f"image shape {smp.image.shape} != (1, {s}, {s})")
        chunks.append(io.f64_bytes(smp.image))
        chunks.append(io.f64_bytes(np.array([smp.label.gx, smp.label.gy])))
    Path(path).write_bytes(b"".join(chunks))


def load(path) -> tuple[list[Sample], SynthSpec | None]:
    r = io.Reader(Path(path).read_bytes(), f"dataset {path}")
    r.magic(MAGIC)
    s, n = r.u32(), r.u32()
    echo = r.json()
    spec = SynthSpec.from_dict(echo) if echo else None
    if spec is not None and (spec.size, spec.count) != (s, n):
        raise io.SizeMismatchError(f"header says S={s}, N={n} but spec echo says "
                                   f"S={spec.size}, N={spec.count}")
    dataset = []
    for _ in range(n):
        img = r.f64(s * s).reshape(1, s, s)
        gx, gy = r.f64(2)
        dataset.append(Sample(image=img, label=CoordLabel(float(gx), float(gy))))
    r.finish()
    return dataset, spec
