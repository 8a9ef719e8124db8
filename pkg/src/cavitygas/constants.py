"""Physical constants shared across the pipeline.

Natural units (hbar = m = 1) are the default everywhere; both constants stay
configurable so the semiclassical limit can be probed by sweeping hbar.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if self.hbar <= 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        if self.mass <= 0:
            raise ValueError(f"mass must be positive, got {self.mass}")


NATURAL = PhysicalConstants()
