"""Extraction configuration and its validity rules."""

from __future__ import annotations

from dataclasses import dataclass

from .backbones import BACKBONES, LAYER_NAMES, MIN_POINTS

ROTATION_MODES = ("max", "mean")


@dataclass(frozen=True)
class ExtractionSpec:
    """What to extract: backbone family, layer tap, and preprocessing.

    ``rotation_aggregation`` applies only to rotation-discretized backbones
    (epn); it defaults to the symmetric max there and must stay unset for
    every other family.
    """

    backbone: str
    layer: str
    checkpoint: str
    rotation_aggregation: str | None = None
    points_per_cloud: int = 1024

    def __post_init__(self) -> None:
        if self.backbone not in BACKBONES:
            raise ValueError(
                f"unknown backbone {self.backbone!r}, expected one of {sorted(BACKBONES)}"
            )
        valid_layers = LAYER_NAMES[self.backbone]
        if self.layer not in valid_layers:
            raise ValueError(
                f"layer {self.layer!r} not valid for {self.backbone}; choose from {valid_layers}"
            )
        if self.backbone == "epn":
            mode = self.rotation_aggregation or "max"
            if mode not in ROTATION_MODES:
                raise ValueError(f"rotation_aggregation must be one of {ROTATION_MODES}")
            object.__setattr__(self, "rotation_aggregation", mode)
        elif self.rotation_aggregation is not None:
            raise ValueError(
                f"rotation_aggregation only applies to rotation-discretized backbones, "
                f"not {self.backbone}"
            )
        if self.points_per_cloud < MIN_POINTS[self.backbone]:
            raise ValueError(
                f"{self.backbone} needs at least {MIN_POINTS[self.backbone]} points per cloud, "
                f"got {self.points_per_cloud}"
            )
