"""Procedural preset engine: synthesizes before/after editing fixtures.

A preset is an ordered list of steps covering the usual retouching moves:
global tone curves, vignetting, grain, selector-gated local gains and box
blur. Rendering is deterministic given the seeds, so fixture sets can be
regenerated bit-identically. Steps serialize to a diffable one-line-per-step
text format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .imgio import Image

# Rec. 709 luma weights, applied in linear light.
LUMA_R, LUMA_G, LUMA_B = 0.2126, 0.7152, 0.0722

_SELECTORS = ("luminance_above", "luminance_below", "top_fraction")


class PresetError(ValueError):
    """A preset step is malformed; the message names the step."""


@dataclass(frozen=True)
class ToneCurve:
    points: tuple  # ((in, out), ...) with strictly increasing in

    def validate(self):
        pts = self.points
        if len(pts) < 2:
            raise PresetError("tonecurve needs at least 2 control points")
        xs = [p[0] for p in pts]
        for v in xs + [p[1] for p in pts]:
            if not (0.0 <= v <= 1.0):
                raise PresetError(f"tonecurve control value {v} outside [0,1]")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise PresetError("tonecurve input coordinates must be strictly increasing")


@dataclass(frozen=True)
class Vignette:
    strength: float
    radius: float

    def validate(self):
        if not (0.0 <= self.strength <= 1.0):
            raise PresetError(f"vignette strength {self.strength} outside [0,1]")
        if self.radius <= 0.0:
            raise PresetError(f"vignette radius {self.radius} must be > 0")


@dataclass(frozen=True)
class Grain:
    sigma: float
    seed: int

    def validate(self):
        if self.sigma < 0.0:
            raise PresetError(f"grain sigma {self.sigma} must be >= 0")


@dataclass(frozen=True)
class LocalEdit:
    selector: str
    threshold: float
    gain: tuple  # (g_r, g_g, g_b)

    def validate(self):
        if self.selector not in _SELECTORS:
            raise PresetError(f"localedit selector {self.selector!r} unknown")
        if len(self.gain) != 3 or any(g < 0 for g in self.gain):
            raise PresetError("localedit gain must be 3 non-negative values")
        if self.selector == "top_fraction" and not (0.0 <= self.threshold <= 1.0):
            raise PresetError(f"localedit top_fraction {self.threshold} outside [0,1]")


@dataclass(frozen=True)
class BoxBlur:
    radius: int

    def validate(self):
        if self.radius < 1:
            raise PresetError(f"boxblur radius {self.radius} must be >= 1")


Step = ToneCurve | Vignette | Grain | LocalEdit | BoxBlur


@dataclass(frozen=True)
class PresetSpec:
    steps: tuple = ()

    def validate(self) -> "PresetSpec":
        for step in self.steps:
            step.validate()
        return self


def luminance(data: np.ndarray) -> np.ndarray:
    return LUMA_R * data[..., 0] + LUMA_G * data[..., 1] + LUMA_B * data[..., 2]


def _selector_mask(pre: np.ndarray, step: LocalEdit) -> np.ndarray:
    if step.selector == "luminance_above":
        return luminance(pre) > step.threshold
    if step.selector == "luminance_below":
        return luminance(pre) < step.threshold
    rows = int(np.floor(step.threshold * pre.shape[0]))
    mask = np.zeros(pre.shape[:2], dtype=bool)
    mask[:rows] = True
    return mask


def _vignette_field(height: int, width: int, step: Vignette) -> np.ndarray:
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    corner = np.hypot(cy, cx)
    yy = np.arange(height, dtype=np.float64)[:, None] - cy
    xx = np.arange(width, dtype=np.float64)[None, :] - cx
    d2 = yy * yy + xx * xx
    if corner > 0:
        d2 = d2 / (corner * corner)
    return np.maximum(0.0, 1.0 - step.strength * d2 / (step.radius**2))


def _box_blur(data: np.ndarray, radius: int) -> np.ndarray:
    taps = np.full(2 * radius + 1, 1.0 / (2 * radius + 1))
    out = correlate1d(data, taps, axis=0, mode="nearest")
    return correlate1d(out, taps, axis=1, mode="nearest")


def render_preset(image: Image, spec: PresetSpec, seed_offset: int = 0) -> Image:
    """Apply the steps in order; returns a clamped float32 image.

    seed_offset shifts every Grain seed, letting fixture generation give each
    rendered image its own (still deterministic) noise realization.
    """
    spec.validate()
    work = image.data.astype(np.float64)
    for step in spec.steps:
        if isinstance(step, ToneCurve):
            xs = np.array([p[0] for p in step.points])
            ys = np.array([p[1] for p in step.points])
            work = np.interp(work, xs, ys)
        elif isinstance(step, Vignette):
            field = _vignette_field(work.shape[0], work.shape[1], step)
            work = work * field[:, :, None]
        elif isinstance(step, Grain):
            rng = np.random.Generator(np.random.PCG64(step.seed + seed_offset))
            work = np.clip(work + rng.normal(0.0, step.sigma, size=work.shape), 0.0, 1.0)
        elif isinstance(step, LocalEdit):
            mask = _selector_mask(work, step)
            edited = work.copy()
            edited[mask] *= np.asarray(step.gain, dtype=np.float64)
            work = edited
        elif isinstance(step, BoxBlur):
            work = _box_blur(work, step.radius)
        else:
            raise PresetError(f"unknown step type {type(step).__name__}")
    return Image(np.clip(work, 0.0, 1.0).astype(np.float32))


# ---------------------------------------------------------------------------
# Text format: one step per line, `name key=value ...`.
# ---------------------------------------------------------------------------

def serialize_preset(spec: PresetSpec) -> str:
    lines = []
    for step in spec.steps:
        if isinstance(step, ToneCurve):
            pts = ",".join(f"{a:g}:{b:g}" for a, b in step.points)
            lines.append(f"tonecurve pts={pts}")
        elif isinstance(step, Vignette):
            lines.append(f"vignette strength={step.strength:g} radius={step.radius:g}")
        elif isinstance(step, Grain):
            lines.append(f"grain sigma={step.sigma:g} seed={step.seed}")
        elif isinstance(step, LocalEdit):
            gains = ",".join(f"{g:g}" for g in step.gain)
            lines.append(
                f"localedit selector={step.selector} threshold={step.threshold:g} gain={gains}"
            )
        elif isinstance(step, BoxBlur):
            lines.append(f"boxblur radius={step.radius}")
    return "\n".join(lines) + "\n"


def parse_preset(text: str) -> PresetSpec:
    steps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, *kvs = line.split()
        args = {}
        for kv in kvs:
            if "=" not in kv:
                raise PresetError(f"line {lineno}: malformed token {kv!r}")
            key, value = kv.split("=", 1)
            args[key] = value
        try:
            if name == "tonecurve":
                pts = tuple(
                    tuple(float(v) for v in pair.split(":"))
                    for pair in args["pts"].split(",")
                )
                steps.append(ToneCurve(pts))
            elif name == "vignette":
                steps.append(Vignette(float(args["strength"]), float(args["radius"])))
            elif name == "grain":
                steps.append(Grain(float(args["sigma"]), int(args["seed"])))
            elif name == "localedit":
                gain = tuple(float(v) for v in args["gain"].split(","))
                steps.append(
                    LocalEdit(args["selector"], float(args["threshold"]), gain)
                )
            elif name == "boxblur":
                steps.append(BoxBlur(int(args["radius"])))
            else:
                raise PresetError(f"line {lineno}: unknown step {name!r}")
        except KeyError as exc:
            raise PresetError(f"line {lineno}: step {name!r} missing key {exc}") from None
    return PresetSpec(tuple(steps)).validate()


# ---------------------------------------------------------------------------
# Fixture sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fixture:
    spec_id: str
    image_id: int
    before: Image
    after: Image
    is_reference: bool


def make_fixture_set(
    source_images: list[Image],
    specs: list[tuple[str, PresetSpec]],
    seed: int,
) -> list[Fixture]:
    """Render every spec over every source image.

    Image 0 of each spec is the designated reference pair; the rest are
    held-out evaluation targets. Grain realizations differ per (spec, image)
    but are fully determined by `seed`.
    """
    if len(source_images) < 2:
        raise ValueError(
            f"need >= 2 source images per spec (reference + held-out), got {len(source_images)}"
        )
    fixtures = []
    for si, (spec_id, spec) in enumerate(specs):
        spec.validate()
        for ii, src in enumerate(source_images):
            offset = seed * 1_000_003 + si * 10_007 + ii * 101
            after = render_preset(src, spec, seed_offset=offset)
            fixtures.append(
                Fixture(
                    spec_id=spec_id,
                    image_id=ii,
                    before=src,
                    after=after,
                    is_reference=(ii == 0),
                )
            )
    return fixtures


def bundled_specs() -> list[tuple[str, PresetSpec]]:
    """The six-spec synthetic transfer suite used by the evaluation harness."""
    s_curve = ToneCurve(((0.0, 0.0), (0.25, 0.12), (0.6, 0.72), (1.0, 1.0)))
    return [
        ("identity", PresetSpec(())),
        ("tone", PresetSpec((s_curve,))),
        ("vignette", PresetSpec((Vignette(strength=1.0, radius=0.9),))),
        ("grain", PresetSpec((Grain(sigma=0.05, seed=11),))),
        (
            "local",
            PresetSpec(
                (LocalEdit("luminance_above", 0.35, (1.8, 1.4, 0.5)),)
            ),
        ),
        (
            "tone_vignette",
            PresetSpec((s_curve, Vignette(strength=0.7, radius=1.1))),
        ),
    ]


def synthetic_source_images(
    count: int, height: int, width: int, seed: int
) -> list[Image]:
    """Procedural stand-ins for photographs.

    Each image combines a bright sky-like vertical gradient, a few smooth
    cosine color fields, soft disk shapes and mild texture, so fixtures
    exercise both smooth regions and luminance structure.
    """
    images = []
    yy = np.linspace(0.0, 1.0, height)[:, None]
    xx = np.linspace(0.0, 1.0, width)[None, :]
    for i in range(count):
        rng = np.random.Generator(np.random.PCG64(seed * 7919 + i))
        top = rng.uniform(0.55, 0.9, size=3)
        top[2] = min(1.0, top[2] + rng.uniform(0.0, 0.15))  # skies lean blue
        bottom = rng.uniform(0.1, 0.45, size=3)
        img = (1.0 - yy)[:, :, None] * top + yy[:, :, None] * bottom
        for _ in range(4):
            fy, fx = rng.uniform(0.5, 3.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            color = rng.uniform(-0.12, 0.12, size=3)
            wave = np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
            img = img + wave[:, :, None] * color
        for _ in range(3):
            cy, cx = rng.uniform(0.15, 0.85, size=2)
            rad = rng.uniform(0.08, 0.25)
            color = rng.uniform(-0.25, 0.25, size=3)
            d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
            blob = np.clip(1.0 - d / rad, 0.0, 1.0) ** 2
            img = img + blob[:, :, None] * color
        img = img + rng.normal(0.0, 0.01, size=img.shape)
        images.append(Image(np.clip(img, 0.0, 1.0).astype(np.float32)))
    return images
