"""
Vehicle rendering.

Each annotation kind has its own visual carrier: the silhouette encodes
the type, the fill hue the color, a 5×5 emblem glyph the make and a small
trim motif the variant. Geometry is laid out on a 32-unit grid and scaled
to the schema's image size; the emblem anchor moves with the body and
depends on the type, the glyph itself keeps a fixed pixel size.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from colabel.synth.models import DomainShift, Schema, VehicleSpec
from colabel.utils.exceptions import DatasetError

GRID = 32
CENTER = (16.0, 17.0)
EMBLEM_CELLS = 5
TRIM_BITS = 3

SILHOUETTES: dict[int, list[tuple[float, float]]] = {
    # sedan: low body with a cabin
    0: [(4, 23), (4, 18), (9, 18), (12, 13), (21, 13), (24, 18), (28, 18), (28, 23)],
    # suv: tall body, sloped front
    1: [(4, 23), (4, 15), (7, 11), (24, 11), (28, 15), (28, 23)],
    # pickup: cab on the left, low bed
    2: [(4, 23), (4, 16), (8, 16), (8, 10), (15, 10), (15, 16), (28, 16), (28, 23)],
    # van: full-length box
    3: [(4, 23), (4, 12), (7, 9), (28, 9), (28, 23)],
}
EMBLEM_ANCHORS: dict[int, tuple[float, float]] = {0: (22, 18), 1: (13, 16), 2: (9, 11), 3: (18, 13)}
TRIM_ANCHORS: dict[int, tuple[float, float]] = {0: (6, 20), 1: (20, 19), 2: (18, 18), 3: (6, 18)}
WHEELS = ((8.0, 23.0), (24.0, 23.0))
WHEEL_RADIUS = 2.5

LIGHT = (235, 235, 235)
DARK = (20, 20, 20)
TIRE = (30, 30, 30)
SATURATION = 0.85
VALUE = 0.85
COLOR_JITTER = 8


@dataclass
class VehicleLayout:
    """Pixel geometry of one rendered vehicle."""

    polygon: list[tuple[float, float]]
    wheels: list[tuple[float, float, float, float]]
    emblem_box: tuple[int, int, int, int]
    trim_box: tuple[int, int, int, int]
    body_mask: np.ndarray
    fill_mask: np.ndarray


def base_color(color_id: int, n_colors: int) -> tuple[int, int, int]:
    """Un-jittered fill color: hues evenly spaced around the wheel."""
    r, g, b = colorsys.hsv_to_rgb(color_id / n_colors, SATURATION, VALUE)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def _validate(spec: VehicleSpec, schema: Schema) -> None:
    bad = spec.out_of_range(schema)
    if bad:
        raise DatasetError(
            "Vehicle spec outside the schema",
            context={"fields": bad, "spec": spec.model_dump()},
        )


def vehicle_layout(spec: VehicleSpec, schema: Schema) -> VehicleLayout:
    """Compute the silhouette, wheel, emblem and trim geometry for ``spec``."""
    _validate(spec, schema)
    unit = schema.image_size // GRID
    size = schema.image_size

    def place(point: tuple[float, float]) -> tuple[float, float]:
        x = ((point[0] - CENTER[0]) * spec.scale + CENTER[0]) * unit + spec.dx * unit
        y = ((point[1] - CENTER[1]) * spec.scale + CENTER[1]) * unit + spec.dy * unit
        return x, y

    polygon = [place(p) for p in SILHOUETTES[spec.type_id]]
    radius = WHEEL_RADIUS * spec.scale * unit
    wheels = []
    for center in WHEELS:
        cx, cy = place(center)
        wheels.append((cx - radius, cy - radius, cx + radius, cy + radius))

    def box(anchor: tuple[float, float], width: int, height: int) -> tuple[int, int, int, int]:
        ax, ay = place(anchor)
        x0 = int(np.clip(round(ax), 0, size - width))
        y0 = int(np.clip(round(ay), 0, size - height))
        return x0, y0, x0 + width, y0 + height

    emblem_box = box(EMBLEM_ANCHORS[spec.type_id], EMBLEM_CELLS * unit, EMBLEM_CELLS * unit)
    trim_box = box(TRIM_ANCHORS[spec.type_id], 2 * TRIM_BITS * unit, 2 * unit)

    body = Image.new("L", (size, size), 0)
    ImageDraw.Draw(body).polygon(polygon, fill=255)
    body_mask = np.asarray(body) > 0
    occluded = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(occluded)
    for wheel in wheels:
        draw.ellipse(wheel, fill=255)
    draw.rectangle((emblem_box[0], emblem_box[1], emblem_box[2] - 1, emblem_box[3] - 1), fill=255)
    draw.rectangle((trim_box[0], trim_box[1], trim_box[2] - 1, trim_box[3] - 1), fill=255)
    fill_mask = body_mask & ~(np.asarray(occluded) > 0)
    return VehicleLayout(
        polygon=polygon,
        wheels=wheels,
        emblem_box=emblem_box,
        trim_box=trim_box,
        body_mask=body_mask,
        fill_mask=fill_mask,
    )


def emblem_bits(make_id: int) -> np.ndarray:
    """5×5 glyph: lit border, interior 3×3 holds the 9 bits of make_id + 1."""
    glyph = np.ones((EMBLEM_CELLS, EMBLEM_CELLS), dtype=bool)
    code = make_id + 1
    for bit in range(9):
        glyph[1 + bit // 3, 1 + bit % 3] = bool((code >> bit) & 1)
    return glyph


def trim_bits(variant_id: int) -> np.ndarray:
    code = variant_id + 1
    return np.array([bool((code >> bit) & 1) for bit in range(TRIM_BITS)])


def render_vehicle(
    spec: VehicleSpec,
    seed: int,
    schema: Schema | None = None,
    domain: DomainShift | None = None,
) -> np.ndarray:
    """
    Render ``spec`` as an H×W×3 uint8 image.

    The output is a pure function of (spec, seed, schema, domain). Random
    draws (color jitter, then background noise) never depend on the ids,
    so two specs differing only in make differ only inside the emblem box.

    Raises:
        DatasetError: If an id lies outside the schema
    """
    schema = schema or Schema()
    domain = domain or DomainShift()
    layout = vehicle_layout(spec, schema)
    unit = schema.image_size // GRID
    rng = np.random.default_rng([seed, spec.noise_seed])

    jitter = rng.integers(-COLOR_JITTER, COLOR_JITTER + 1, size=3)
    fill = tuple(int(np.clip(c + j, 0, 255)) for c, j in zip(base_color(spec.color_id, schema.n_colors), jitter))

    canvas = Image.new("RGB", (schema.image_size, schema.image_size), (domain.background,) * 3)
    draw = ImageDraw.Draw(canvas)
    draw.polygon(layout.polygon, fill=fill)
    for wheel in layout.wheels:
        draw.ellipse(wheel, fill=TIRE)

    x0, y0, _, _ = layout.trim_box
    for index, lit in enumerate(trim_bits(spec.variant_id)):
        left = x0 + 2 * index * unit
        draw.rectangle((left, y0, left + 2 * unit - 1, y0 + 2 * unit - 1), fill=DARK if lit else LIGHT)

    x0, y0, _, _ = layout.emblem_box
    for (row, col), lit in np.ndenumerate(emblem_bits(spec.make_id)):
        left, top = x0 + col * unit, y0 + row * unit
        draw.rectangle((left, top, left + unit - 1, top + unit - 1), fill=LIGHT if lit else DARK)

    image = np.asarray(canvas, dtype=np.float64)
    if domain.noise > 0:
        image = image + rng.normal(0.0, domain.noise, size=image.shape)
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)
