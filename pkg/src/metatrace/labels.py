"""Metadata label spaces: one family of processing or acquisition classes.

Processing families (jpeg, sharpening, resizing, interpolation) have fixed
parameter grids; acquisition families (make, model variants, exposure,
aperture, iso, focal) are binned from Exif values. The expected class count
per family is fixed and validated on construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PROCESSING_FAMILIES = ("jpeg", "sharpening", "resizing", "interpolation")
ACQUISITION_FAMILIES = (
    "make",
    "model_all",
    "model_smart",
    "model_smart_vs_nonsmart",
    "exposure",
    "aperture",
    "iso",
    "focal",
)
ALL_FAMILIES = PROCESSING_FAMILIES + ACQUISITION_FAMILIES

# Expected number of classes per family.
FAMILY_CLASS_COUNTS = {
    "jpeg": 6,
    "sharpening": 3,
    "resizing": 3,
    "interpolation": 4,
    "make": 9,
    "model_all": 88,
    "model_smart": 12,
    "model_smart_vs_nonsmart": 2,
    "exposure": 16,
    "aperture": 17,
    "iso": 16,
    "focal": 13,
}

JPEG_QUALITIES = (75, 85, 95)
JPEG_CHROMA_MODES = ("4:2:0", "4:4:4")
SHARPEN_ALPHAS = (1.0, 2.0, 4.0)
RESIZE_FACTORS = (1.0, 0.5, 2.0)
INTERP_METHODS = ("bilinear", "bicubic", "lanczos", "box")

MAKES = (
    "Apple",
    "Canon",
    "EASTMAN KODAK COMPANY",
    "FUJIFILM",
    "NIKON",
    "OLYMPUS OPTICAL CO.,LTD",
    "Panasonic",
    "SONY",
    "Samsung",
)

SMARTPHONE_MODELS = (
    "iPhone 11",
    "iPhone 11 Pro Max",
    "iPhone 12 Pro",
    "iPhone 12 Pro Max",
    "iPhone 13 Pro",
    "iPhone 6",
    "iPhone 6s",
    "iPhone 7",
    "iPhone 7 Plus",
    "iPhone X",
    "iPhone XR",
    "iPhone XS",
)

CAMERA_MODELS = (
    "CYBERSHOT",
    "Canon EOS 10D",
    "Canon EOS 20D",
    "Canon EOS 300D DIGITAL",
    "Canon EOS 30D",
    "Canon EOS 350D DIGITAL",
    "Canon EOS 40D",
    "Canon EOS 450D",
    "Canon EOS 50D",
    "Canon EOS 5D",
    "Canon EOS 5D Mark II",
    "Canon EOS 5D Mark III",
    "Canon EOS 5D Mark IV",
    "Canon EOS 600D",
    "Canon EOS 60D",
    "Canon EOS 6D",
    "Canon EOS 6D Mark II",
    "Canon EOS 70D",
    "Canon EOS 7D",
    "Canon EOS 7D Mark II",
    "Canon EOS 80D",
    "Canon EOS 90D",
    "Canon EOS DIGITAL REBEL",
    "Canon EOS DIGITAL REBEL XT",
    "Canon EOS R",
    "Canon EOS R5",
    "Canon EOS R6",
    "Canon EOS REBEL T3i",
    "Canon EOS Rebel T6",
    "Canon EOS-1D X",
    "Canon EOS-1D X Mark II",
    "E-M1MarkII",
    "E5700",
    "E990",
    "ILCE-6000",
    "ILCE-6400",
    "ILCE-7",
    "ILCE-7M3",
    "ILCE-7RM2",
    "ILCE-7RM3",
    "Kodak CLAS Digital Film Scanner / HR200",
    "NIKON D100",
    "NIKON D200",
    "NIKON D300",
    "NIKON D3100",
    "NIKON D3200",
    "NIKON D40",
    "NIKON D5",
    "NIKON D50",
    "NIKON D500",
    "NIKON D5000",
    "NIKON D5100",
    "NIKON D5200",
    "NIKON D5300",
    "NIKON D5500",
    "NIKON D5600",
    "NIKON D600",
    "NIKON D610",
    "NIKON D70",
    "NIKON D700",
    "NIKON D7000",
    "NIKON D7100",
    "NIKON D7200",
    "NIKON D750",
    "NIKON D7500",
    "NIKON D80",
    "NIKON D800",
    "NIKON D810",
    "NIKON D850",
    "NIKON D90",
    "NIKON Z 6",
    "NIKON Z 6_2",
    "NIKON Z 9",
    "X-T2",
    "X-T3",
    "X-T4",
) + SMARTPHONE_MODELS

# Canonical value ladders for the numeric acquisition families. The exact
# bin boundaries are a versioned stand-in (see configs/); only the class
# counts and overall ranges are fixed.
EXPOSURE_LADDER = (
    "1/1000", "1/800", "1/640", "1/500", "1/400", "1/320", "1/250", "1/200",
    "1/160", "1/125", "1/100", "1/80", "1/60", "1/50", "1/40", "1/30",
)
APERTURE_LADDER = (
    1.8, 2.0, 2.2, 2.5, 2.8, 3.2, 3.5, 4.0, 4.5,
    5.0, 5.6, 6.3, 7.1, 8.0, 9.0, 10.0, 11.0,
)
ISO_LADDER = (
    50, 64, 80, 100, 125, 160, 200, 250,
    320, 400, 500, 640, 800, 1000, 1600, 3200,
)
FOCAL_LADDER = (4, 18, 24, 28, 35, 50, 70, 85, 105, 135, 150, 180, 200)

# Make allowlists for the smart vs non-smart binary label.
NONSMART_MAKERS = ("Canon", "Nikon", "Fujifilm", "Panasonic", "Olympus")
SMART_MAKERS = ("Apple", "Google", "Huawei", "Xiaomi", "Motorola")


class LabelSpaceError(ValueError):
    """Raised when a label space violates its family contract."""


@dataclass(frozen=True)
class LabelSpace:
    """One metadata parameter family and its ordered class names."""

    family: str
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.family not in ALL_FAMILIES:
            raise LabelSpaceError(f"unknown family {self.family!r}")
        if not self.class_names:
            raise LabelSpaceError("class_names must be nonempty")
        if len(set(self.class_names)) != len(self.class_names):
            raise LabelSpaceError("class_names must be unique")
        expected = FAMILY_CLASS_COUNTS[self.family]
        if len(self.class_names) != expected:
            raise LabelSpaceError(
                f"family {self.family!r} requires {expected} classes, "
                f"got {len(self.class_names)}"
            )

    @property
    def M(self) -> int:
        return len(self.class_names)

    def index_of(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise LabelSpaceError(
                f"class {name!r} not in family {self.family!r}"
            ) from None


def _jpeg_class_names() -> tuple[str, ...]:
    return tuple(
        f"q{q}-{chroma.replace(':', '')}"
        for q in JPEG_QUALITIES
        for chroma in JPEG_CHROMA_MODES
    )


_BUILTIN_CLASS_NAMES = {
    "jpeg": _jpeg_class_names(),
    "sharpening": tuple(f"alpha{a:g}" for a in SHARPEN_ALPHAS),
    "resizing": tuple(f"{f:g}x" for f in RESIZE_FACTORS),
    "interpolation": INTERP_METHODS,
    "make": MAKES,
    "model_all": CAMERA_MODELS,
    "model_smart": SMARTPHONE_MODELS,
    "model_smart_vs_nonsmart": ("smart", "non-smart"),
    "exposure": EXPOSURE_LADDER,
    "aperture": tuple(f"f{a:g}" for a in APERTURE_LADDER),
    "iso": tuple(str(v) for v in ISO_LADDER),
    "focal": tuple(f"{v}mm" for v in FOCAL_LADDER),
}


def builtin_space(family: str) -> LabelSpace:
    """Return the canonical LabelSpace for a family."""
    if family not in _BUILTIN_CLASS_NAMES:
        raise LabelSpaceError(f"unknown family {family!r}")
    return LabelSpace(family=family, class_names=_BUILTIN_CLASS_NAMES[family])
