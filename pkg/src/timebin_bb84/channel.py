"""Scalar-transmittance fiber model between the two stations.

Interference in this scheme is insensitive to polarization drift in the
link, so the channel reduces to a wavelength-flat power transmittance:
distance-proportional attenuation plus a fixed insertion term.  An
interception hook lets an eavesdropper act on the state before it enters
the fiber.  Chromatic dispersion and timing jitter are ignored; they are
orders of magnitude below the 5 ns slot spacing at the lengths of
interest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .optics import TimeBinState

if TYPE_CHECKING:  # pragma: no cover
    from .eavesdrop import EveSpec


@dataclass(frozen=True)
class ChannelSpec:
    """Fiber parameters. 0.2 dB/km is the generic telecom value at 1.55 um
    (an assumption; the modeled experiment used a short patch fiber)."""

    length_km: float = 0.0
    atten_db_per_km: float = 0.2
    fixed_insertion_db: float = 0.0
    eve_enabled: bool = False

    def __post_init__(self) -> None:
        if self.length_km < 0:
            raise ValueError("length_km must be >= 0")
        if self.atten_db_per_km < 0:
            raise ValueError("atten_db_per_km must be >= 0")
        if self.fixed_insertion_db < 0:
            raise ValueError("fixed_insertion_db must be >= 0")


def transmittance(spec: ChannelSpec) -> float:
    """Power transmittance 10^-(length*atten + fixed)/10, in (0, 1]."""
    total_db = spec.length_km * spec.atten_db_per_km + spec.fixed_insertion_db
    return 10.0 ** (-total_db / 10.0)


def propagate(
    state: TimeBinState,
    spec: ChannelSpec,
    eve: "EveSpec | None" = None,
    rng: np.random.Generator | None = None,
) -> TimeBinState:
    """Send a state down the fiber, optionally through the eavesdropper.

    The attack (if enabled) acts on the state before attenuation; the fiber
    then scales every amplitude by sqrt(transmittance), preserving all
    relative phases between bins.
    """
    if spec.eve_enabled:
        if eve is None or rng is None:
            raise ValueError("eve_enabled channel requires an EveSpec and rng")
        from .eavesdrop import attack

        state = attack(state, eve, rng)
    return state.scaled(math.sqrt(transmittance(spec)))
