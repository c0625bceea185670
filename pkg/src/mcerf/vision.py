"""Image quadrant geometry and the image-to-text describer.

An image is split into four overlapping corner-anchored quadrants, each
covering a fixed fraction of the source in both axes. The fraction must
exceed one half so the quadrants overlap and jointly cover every pixel
(the center lies in all four). Each crop then gets a scale factor that
lifts its shorter side to at least UPSCALE_FLOOR pixels.

Geometry is computed exactly: the fraction is interpreted as a decimal
number and all sizes are derived with rational arithmetic, so crop sizes
and the upscale floor never suffer float rounding. Nothing here decodes
pixels; crops are specs that a caller materializes when bytes are needed.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .backends import ChatBackend, ChatRequest, ChatResponse, ImagePart, TextPart
from .errors import DegenerateImage, InvalidFraction, UnparseableDescription
from .prompts import load_prompt
from .util import strip_code_fences

UPSCALE_FLOOR = 700
DEFAULT_FRACTION = 0.55

CORNERS = ("top_left", "top_right", "bottom_left", "bottom_right")

DESCRIPTION_KEYS = (
    "figure_type",
    "axes",
    "data_series",
    "annotations",
    "trends",
    "uncertainties",
    "conclusions",
)


@dataclass(frozen=True)
class ImageRef:
    locator: str
    width: int
    height: int


@dataclass(frozen=True)
class QuadrantSpec:
    """One corner-anchored crop of a source image, plus its upscale factor."""

    origin_x: int
    origin_y: int
    crop_w: int
    crop_h: int
    scale: Fraction = Fraction(1)
    corner: str = ""

    @property
    def scaled_w(self) -> Fraction:
        return self.crop_w * self.scale

    @property
    def scaled_h(self) -> Fraction:
        return self.crop_h * self.scale


@dataclass
class ImageDescription:
    """Structured description plus a prose narrative of one image."""

    structured: dict
    narrative: str

    def digest_text(self) -> str:
        return json.dumps(self.structured, sort_keys=True) + "\n" + self.narrative


def split_quadrants(img: ImageRef, fraction: float = DEFAULT_FRACTION) -> list[QuadrantSpec]:
    """Four overlapping crops anchored at the corners, in CORNERS order.

    Crop size is ceil(fraction * dimension) per axis, with the fraction read
    as a decimal value; fraction must lie strictly between 0.5 and 1.
    """
    if img.width < 2 or img.height < 2:
        raise DegenerateImage(
            f"{img.locator or 'image'}: {img.width}x{img.height} is too small to split"
        )
    frac = Fraction(str(fraction))
    if not (Fraction(1, 2) < frac < 1):
        raise InvalidFraction(
            f"fraction must be in (0.5, 1) so quadrants overlap, got {fraction}"
        )
    crop_w = math.ceil(frac * img.width)
    crop_h = math.ceil(frac * img.height)
    x_right = img.width - crop_w
    y_bottom = img.height - crop_h
    origins = [(0, 0), (x_right, 0), (0, y_bottom), (x_right, y_bottom)]
    return [
        QuadrantSpec(origin_x=x, origin_y=y, crop_w=crop_w, crop_h=crop_h, corner=corner)
        for (x, y), corner in zip(origins, CORNERS)
    ]


def upscale_spec(quadrant: QuadrantSpec) -> QuadrantSpec:
    """Set the scale lifting the crop's shorter side to at least UPSCALE_FLOOR."""
    short = min(quadrant.crop_w, quadrant.crop_h)
    scale = max(Fraction(1), Fraction(UPSCALE_FLOOR, short))
    return dataclasses.replace(quadrant, scale=scale)


def _parse_description(text: str) -> ImageDescription:
    body = strip_code_fences(text)
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise UnparseableDescription(f"describer output is not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UnparseableDescription("describer output is JSON but not an object")
    structured = {key: doc.get(key) for key in DESCRIPTION_KEYS}
    narrative = doc.get("report") or doc.get("narrative") or ""
    if not isinstance(narrative, str):
        narrative = json.dumps(narrative)
    return ImageDescription(structured=structured, narrative=narrative)


def describe_image(
    img: ImageRef,
    quadrants: list[QuadrantSpec],
    backend: ChatBackend,
    deep: bool = False,
) -> tuple[ImageDescription, list[ChatResponse]]:
    """Describe an image from its full view plus the four quadrant crops.

    Sends the original image and four crop parts with the describer prompt
    (the deep prompt targets CAD drawings and low-text diagrams). A response
    that fails JSON parsing is retried once with a repair instruction; a
    second failure raises UnparseableDescription. Returns the parsed
    description and the raw responses (one, or two when repaired).
    """
    system = load_prompt("deep_vision_system" if deep else "vision_describe_system")
    parts: list = [ImagePart(ref=img.locator, tag="original")]
    for i, q in enumerate(quadrants):
        parts.append(
            ImagePart(ref=f"{img.locator}#quad{i}", crop=q, tag=f"crop:{q.corner or i}")
        )
    parts.append(TextPart(load_prompt("vision_describe_user"), tag="instructions"))
    req = ChatRequest(system_prompt=system, parts=parts)
    resp = backend.chat(req)
    responses = [resp]
    try:
        return _parse_description(resp.text), responses
    except UnparseableDescription:
        repair = ChatRequest(
            system_prompt=system,
            parts=parts + [TextPart("Return only valid JSON.", tag="repair")],
        )
        resp2 = backend.chat(repair)
        responses.append(resp2)
        return _parse_description(resp2.text), responses
