"""Device classifier presets (CIFAR-10 vehicle/animal accuracies).

Accuracy on vehicles is read as ``1 - p_a`` and accuracy on animals as
``1 - p_b``, following the column labels of the source table even though
``p_a`` is the false-alarm rate on non-targets.
"""
from __future__ import annotations

from typing import NamedTuple


class Preset(NamedTuple):
    name: str
    vehicle_accuracy: float
    animal_accuracy: float

    @property
    def p_a(self) -> float:
        return round(1 - self.vehicle_accuracy, 4)

    @property
    def p_b(self) -> float:
        return round(1 - self.animal_accuracy, 4)


PRESETS = {
    p.name: p
    for p in (
        Preset("lenet", 0.6163, 0.5976),
        Preset("alexnet", 0.7876, 0.7567),
        Preset("vgg16", 0.8453, 0.8260),
        Preset("resnet18", 0.9517, 0.9352),
    )
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
