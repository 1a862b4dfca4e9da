"""Synthetic particle scenes with analytic ground-truth flow.

Scenes are ensembles of Gaussian blobs advected by an analytic velocity
model, rendered as clamped intensity sums with optional additive noise
and random out-of-plane particle replacement. All randomness comes from
one seeded numpy PCG64 generator, and the draw order is fixed, so the
generator identity plus the seed fully determine a sequence (this is part
of the on-disk scene contract).

Draw order per sequence: initial x positions, initial y positions, then
per rendered frame its noise field (if noise_sigma > 0), then for the
transition to the next frame the out-of-plane uniforms followed by the
replacement x and y positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError
from .flow import FlowField
from .image_core import ImageFrame

MODEL_KINDS = ("uniform", "shear", "vortex", "composite")

# Pixels brighter than this count toward the saturated-coverage fraction.
SATURATION_INTENSITY = 0.9

# Particle density (particles per pixel) of the "saturation" regime: the
# point where rendered scenes are mostly clipped speckle. Chosen so that
# pre-noise coverage above SATURATION_INTENSITY is roughly one half.
SATURATION_DENSITY = 0.035

# Paper-regime displacement magnitudes in pixels/frame: 35 cm/s and
# 25 cm/s at 32 px/cm and 60 frames/s.
FAST_SPEED = 35.0 * 32.0 / 60.0
MEDIUM_SPEED = 25.0 * 32.0 / 60.0


@dataclass(frozen=True)
class FlowModel:
    """Analytic velocity field, pixels/frame.

    Kinds: ``uniform`` translation (u0, v0); ``shear`` with horizontal
    speed proportional to the distance from a reference row; ``vortex``
    with solid-body rotation inside the core radius and a 1/r tail
    outside (tangential speed peaks at the core radius); ``composite``
    sums any number of parts.
    """

    kind: str
    u0: float = 0.0
    v0: float = 0.0
    shear_rate: float = 0.0
    shear_center: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    peak_speed: float = 0.0
    core_radius: float = 1.0
    parts: tuple["FlowModel", ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        scalars = (
            self.u0,
            self.v0,
            self.shear_rate,
            self.shear_center,
            self.center[0],
            self.center[1],
            self.peak_speed,
            self.core_radius,
        )
        if not all(math.isfinite(s) for s in scalars):
            raise ConfigError("flow model parameters must be finite")
        if self.kind == "vortex" and not self.core_radius > 0:
            raise ConfigError(f"core_radius must be > 0, got {self.core_radius}")
        if self.kind == "composite" and not self.parts:
            raise ConfigError("composite model needs at least one part")

    @classmethod
    def uniform(cls, u0: float, v0: float) -> "FlowModel":
        return cls(kind="uniform", u0=u0, v0=v0)

    @classmethod
    def shear(cls, rate: float, center_y: float = 0.0) -> "FlowModel":
        return cls(kind="shear", shear_rate=rate, shear_center=center_y)

    @classmethod
    def vortex(cls, center, peak_speed: float, core_radius: float) -> "FlowModel":
        return cls(
            kind="vortex",
            center=(float(center[0]), float(center[1])),
            peak_speed=peak_speed,
            core_radius=core_radius,
        )

    @classmethod
    def composite(cls, *parts: "FlowModel") -> "FlowModel":
        return cls(kind="composite", parts=tuple(parts))

    def velocity(self, x, y):
        """(u, v) at coordinate arrays ``x``, ``y``."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "uniform":
            return np.full_like(x, self.u0), np.full_like(y, self.v0)
        if self.kind == "shear":
            return self.shear_rate * (y - self.shear_center), np.zeros_like(y)
        if self.kind == "vortex":
            dx = x - self.center[0]
            dy = y - self.center[1]
            r = np.hypot(dx, dy)
            inside = r <= self.core_radius
            with np.errstate(divide="ignore", invalid="ignore"):
                speed = np.where(
                    inside,
                    self.peak_speed * r / self.core_radius,
                    self.peak_speed * self.core_radius / np.where(r > 0, r, 1.0),
                )
                ux = np.where(r > 0, -speed * dy / np.where(r > 0, r, 1.0), 0.0)
                uy = np.where(r > 0, speed * dx / np.where(r > 0, r, 1.0), 0.0)
            return ux, uy
        u = np.zeros_like(x)
        v = np.zeros_like(y)
        for part in self.parts:
            pu, pv = part.velocity(x, y)
            u = u + pu
            v = v + pv
        return u, v

    def truth_field(self, width: int, height: int) -> FlowField:
        """The model sampled at every pixel center, all pixels valid."""
        ys, xs = np.mgrid[0:height, 0:width]
        u, v = self.velocity(xs.astype(np.float64), ys.astype(np.float64))
        return FlowField(u=u, v=v, valid=np.ones((height, width), dtype=bool))


@dataclass(frozen=True)
class SceneSpec:
    """Scene geometry, seeding, and noise controls.

    ``particle_density`` is particles per pixel (0 renders an empty
    scene); ``particle_radius`` is the Gaussian blob sigma in pixels;
    ``out_of_plane_rate`` is the per-frame probability that a particle is
    replaced at a fresh random position. A positive ``dead_border``
    insets the seeded region by that many pixels, leaving a
    zero-intensity rim like the dark surround of a real imaging fan;
    local solvers mark that rim invalid through their texture gates.
    """

    width: int = 256
    height: int = 256
    particle_density: float = 0.01
    particle_radius: float = 2.0
    out_of_plane_rate: float = 0.02
    noise_sigma: float = 0.0
    frames: int = 2
    seed: int = 0
    dead_border: float = 0.0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ConfigError(f"scene must be at least 2x2, got {self.width}x{self.height}")
        if self.particle_density < 0:
            raise ConfigError(f"particle_density must be >= 0, got {self.particle_density}")
        if not self.particle_radius > 0:
            raise ConfigError(f"particle_radius must be > 0, got {self.particle_radius}")
        if not 0.0 <= self.out_of_plane_rate <= 1.0:
            raise ConfigError(
                f"out_of_plane_rate must be in [0, 1], got {self.out_of_plane_rate}"
            )
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.frames < 2:
            raise ConfigError(f"frames must be >= 2, got {self.frames}")
        if self.dead_border < 0 or 2 * self.dead_border >= min(self.width, self.height):
            raise ConfigError(
                f"dead_border must be >= 0 and leave a live region, got {self.dead_border}"
            )

    @property
    def particle_count(self) -> int:
        return int(round(self.particle_density * self.width * self.height))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Analytic flow for each consecutive frame pair."""

    fields: tuple[FlowField, ...]

    def __post_init__(self):
        if len(self.fields) < 1:
            raise ConfigError("ground truth needs at least one frame pair")
        object.__setattr__(self, "fields", tuple(self.fields))

    def field(self, pair_index: int) -> FlowField:
        return self.fields[pair_index]


def _spawn_bounds(spec: SceneSpec, model: FlowModel) -> tuple[float, float, float, float]:
    """Seeding rectangle (x_lo, x_hi, y_lo, y_hi).

    Without a dead border, particles spawn beyond the frame so blobs
    straddling the edge and inflow during short sequences keep density
    roughly even. With one, they spawn inset so the rim stays dark.
    """
    if spec.dead_border > 0:
        b = spec.dead_border
        return (b, spec.width - 1 - b, b, spec.height - 1 - b)
    truth = model.truth_field(spec.width, spec.height)
    vmax = float(np.hypot(truth.u, truth.v).max())
    margin = 3.0 * spec.particle_radius + vmax
    return (-margin, spec.width - 1 + margin, -margin, spec.height - 1 + margin)


def render_scene(spec: SceneSpec, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Clamped blob-sum intensities for one particle configuration."""
    img = _kernels.render_particles(
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(ys, dtype=np.float64),
        spec.particle_radius,
        spec.width,
        spec.height,
    )
    return np.clip(img, 0.0, 1.0)


def _advance(xs, ys, model, spec, bounds, rng):
    """One Euler advection step plus out-of-plane replacement.

    Returns the new positions and the number of replaced particles.
    """
    u, v = model.velocity(xs, ys)
    xs = xs + u
    ys = ys + v
    if spec.out_of_plane_rate > 0 and xs.size:
        gone = rng.uniform(0.0, 1.0, xs.size) < spec.out_of_plane_rate
        count = int(gone.sum())
        if count:
            xs[gone] = rng.uniform(bounds[0], bounds[1], count)
            ys[gone] = rng.uniform(bounds[2], bounds[3], count)
    else:
        count = 0
    return xs, ys, count


def generate_sequence(spec: SceneSpec, model: FlowModel):
    """Render the frame sequence and its analytic ground truth.

    Returns ``(frames, truth)`` where ``frames`` is a tuple of ImageFrame
    and ``truth`` holds one FlowField per consecutive pair. Deterministic
    for a fixed spec (the seed lives in the spec).
    """
    rng = np.random.default_rng(spec.seed)
    bounds = _spawn_bounds(spec, model)
    n = spec.particle_count
    xs = rng.uniform(bounds[0], bounds[1], n)
    ys = rng.uniform(bounds[2], bounds[3], n)

    frames = []
    for idx in range(spec.frames):
        img = render_scene(spec, xs, ys)
        if spec.noise_sigma > 0:
            img = np.clip(
                img + rng.normal(0.0, spec.noise_sigma, img.shape), 0.0, 1.0
            )
        frames.append(ImageFrame(img))
        if idx < spec.frames - 1:
            xs, ys, _ = _advance(xs, ys, model, spec, bounds, rng)

    pair_field = model.truth_field(spec.width, spec.height)
    truth = GroundTruth(fields=tuple(pair_field for _ in range(spec.frames - 1)))
    return tuple(frames), truth


def density_to_saturation(spec: SceneSpec) -> float:
    """Fraction of pixels whose pre-noise rendered intensity exceeds the
    saturation cutoff, for the spec's seeded particle draw."""
    rng = np.random.default_rng(spec.seed)
    if spec.dead_border > 0:
        b = spec.dead_border
        bounds = (b, spec.width - 1 - b, b, spec.height - 1 - b)
    else:
        margin = 3.0 * spec.particle_radius
        bounds = (-margin, spec.width - 1 + margin, -margin, spec.height - 1 + margin)
    n = spec.particle_count
    xs = rng.uniform(bounds[0], bounds[1], n)
    ys = rng.uniform(bounds[2], bounds[3], n)
    img = render_scene(spec, xs, ys)
    return float((img > SATURATION_INTENSITY).mean())


def preset(name: str, seed: int = 0):
    """Named scene presets: ``(SceneSpec, FlowModel)``.

    ``fast``
        Uniform translation at the high-speed regime (~18.7 px/frame),
        smooth large blobs, clean images — the large-displacement case.
    ``medium``
        Rankine vortex peaking at ~13.3 px/frame at saturation seeding
        with out-of-plane churn and noise — the algorithm-comparison case.
    ``saturation``
        Small uniform translation (3, 2) px at saturation seeding with no
        noise — the subpixel-accuracy case.
    """
    if name == "fast":
        return (
            SceneSpec(
                width=256,
                height=256,
                particle_density=0.012,
                particle_radius=3.0,
                out_of_plane_rate=0.0,
                noise_sigma=0.0,
                frames=2,
                seed=seed,
                dead_border=48.0,
            ),
            FlowModel.uniform(FAST_SPEED, 0.0),
        )
    if name == "medium":
        return (
            SceneSpec(
                width=256,
                height=256,
                particle_density=SATURATION_DENSITY,
                particle_radius=2.0,
                out_of_plane_rate=0.10,
                noise_sigma=0.02,
                frames=2,
                seed=seed,
            ),
            FlowModel.vortex((127.5, 127.5), MEDIUM_SPEED, 80.0),
        )
    if name == "saturation":
        return (
            SceneSpec(
                width=256,
                height=256,
                particle_density=SATURATION_DENSITY,
                particle_radius=2.0,
                out_of_plane_rate=0.0,
                noise_sigma=0.0,
                frames=2,
                seed=seed,
            ),
            FlowModel.uniform(3.0, 2.0),
        )
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


PRESET_NAMES = ("fast", "medium", "saturation")
