"""Positive/negative prompt construction for outpainting and backgrounds."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from . import _rng
from .geometry import CLASS_NAMES, check_class_id

POSITIVE_TEMPLATE = "A {location} during {time} with no vehicle."
POSITIVE_PATTERN = re.compile(r"A .+ during .+ with no vehicle\.")

LOCATIONS = ("highway", "road", "street", "downtown", "plaza")
TIMES = (
    "spring", "summer", "fall", "winter", "a sunny day", "a cloudy day",
    "a rainy day", "evening", "sunset", "sunrise",
)
BASE_NEGATIVES = ("traffic", "train", "car", "truck", "bus", "van")
EXTRA_NEGATIVES = ("billboard", "text", "advertisement")

_TRUCK_LIKE = ("highway", "road", "street")
_BUS_LIKE = ("street", "downtown", "plaza")
DEFAULT_CLASS_LOCATIONS = {
    name: list(LOCATIONS) for name in CLASS_NAMES
} | {"TRUCK": list(_TRUCK_LIKE), "VAN": list(_TRUCK_LIKE), "BUS": list(_BUS_LIKE), "MINIBUS": list(_BUS_LIKE)}

# Original stock descriptions; vehicle-free urban scenes at varied times and weather.
DEFAULT_BACKGROUNDS = (
    "An empty city street at dawn, wet asphalt reflecting soft light.",
    "A quiet downtown plaza on a sunny afternoon, benches and trees, no people.",
    "A deserted suburban road lined with houses under an overcast sky.",
    "An empty highway stretching to the horizon at sunset.",
    "A city park path with autumn trees on a cloudy day.",
    "A narrow old-town street with stone buildings in light rain.",
    "An empty parking-free boulevard at night under street lamps.",
    "A snowy residential street in winter with bare trees.",
)


class PromptConfigError(ValueError):
    pass


@dataclass
class PromptSpec:
    positive: str
    negative: str
    location: str | None = None
    time: str | None = None
    class_id: int | None = None


@dataclass
class PromptConfig:
    locations: list[str] = field(default_factory=lambda: list(LOCATIONS))
    class_locations: dict[str, list[str]] = field(
        default_factory=lambda: {k: list(v) for k, v in DEFAULT_CLASS_LOCATIONS.items()}
    )
    times: list[str] = field(default_factory=lambda: list(TIMES))
    negatives: list[str] = field(default_factory=lambda: list(BASE_NEGATIVES))
    extra_negatives: list[str] = field(default_factory=lambda: list(EXTRA_NEGATIVES))
    include_extra_negatives: bool = False
    backgrounds: list[str] = field(default_factory=lambda: list(DEFAULT_BACKGROUNDS))

    def validate(self):
        if not self.locations or not self.times:
            raise PromptConfigError("location and time vocabularies must be non-empty")
        for name in CLASS_NAMES:
            subset = self.class_locations.get(name, self.locations)
            if not subset:
                raise PromptConfigError(f"class {name} has an empty location subset")
            unknown = set(subset) - set(self.locations)
            if unknown:
                raise PromptConfigError(f"class {name} uses locations outside the vocabulary: {sorted(unknown)}")
        return self

    def locations_for(self, class_id) -> list[str]:
        name = CLASS_NAMES[check_class_id(class_id)]
        subset = self.class_locations.get(name, self.locations)
        if not subset:
            raise PromptConfigError(f"class {name} has an empty location subset")
        return list(subset)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "PromptConfig":
        known = {k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__}
        unknown = set(d or {}) - set(known)
        if unknown:
            raise PromptConfigError(f"unknown prompt config keys: {sorted(unknown)}")
        cfg = cls(**known)
        cfg.class_locations = {k.upper(): list(v) for k, v in cfg.class_locations.items()}
        return cfg.validate()

    @classmethod
    def from_file(cls, path) -> "PromptConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text(encoding="utf-8")))

    def to_file(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True), encoding="utf-8")


def build_negative(include_extras=False, cfg=None) -> str:
    cfg = cfg or PromptConfig()
    tokens = list(cfg.negatives) + (list(cfg.extra_negatives) if include_extras else [])
    return ", ".join(tokens)


def build_positive(class_id, rng=None, cfg=None, location=None, time=None) -> PromptSpec:
    """Render ``A {location} during {time} with no vehicle.`` for a vehicle class.

    ``location`` and ``time`` are drawn uniformly unless forced.
    """
    cfg = cfg or PromptConfig()
    rng = _rng.as_generator(rng)
    subset = cfg.locations_for(class_id)
    if location is None:
        location = subset[int(rng.integers(len(subset)))]
    elif location not in subset:
        raise PromptConfigError(f"location {location!r} not allowed for {CLASS_NAMES[class_id]}")
    if time is None:
        if not cfg.times:
            raise PromptConfigError("time vocabulary is empty")
        time = cfg.times[int(rng.integers(len(cfg.times)))]
    return PromptSpec(
        positive=POSITIVE_TEMPLATE.format(location=location, time=time),
        negative=build_negative(cfg.include_extra_negatives, cfg),
        location=location,
        time=time,
        class_id=int(class_id),
    )


def build_background_prompt(rng=None, cfg=None) -> PromptSpec:
    cfg = cfg or PromptConfig()
    if not cfg.backgrounds:
        raise PromptConfigError("background description list is empty")
    rng = _rng.as_generator(rng)
    text = cfg.backgrounds[int(rng.integers(len(cfg.backgrounds)))]
    negative = build_negative(cfg.include_extra_negatives, cfg)
    missing = [t for t in BASE_NEGATIVES if t not in cfg.negatives]
    if missing:
        negative = ", ".join([negative, *missing]) if negative else ", ".join(missing)
    return PromptSpec(positive=text, negative=negative)
