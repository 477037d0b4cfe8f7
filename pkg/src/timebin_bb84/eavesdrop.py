"""Intercept-resend adversary with a receiver-identical apparatus.

The attacker cannot choose a measurement basis in this scheme: her
interferometer, like the legitimate receiver's, sorts each pulse into a
time slot (and port) passively.  She classifies whatever outcome she gets,
re-prepares the corresponding canonical state at full amplitude and
forwards it; pulses that produce no outcome are suppressed (vacuum
forwarded).  Because her measurement is the passive three-slot one rather
than a random two-basis projection, the induced error rate is worth
deriving by exhaustive enumeration instead of assuming the textbook 25%:
the enumeration confirms exactly 1/4 in both bases for ideal devices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optics import (
    CANONICAL_STATES,
    AmzSpec,
    Basis,
    Port,
    Slot,
    TimeBinState,
    bob_transform,
    canonical_link_state,
    ideal_amz,
    vacuum_state,
)

# Flattened-cell (slot-major) classification to canonical-state index; 6 = no
# outcome -> vacuum resend.
VACUUM_INDEX = 4
OUTCOME_TO_STATE_INDEX = np.array([0, 0, 3, 2, 1, 1, VACUUM_INDEX], dtype=np.uint8)


@dataclass(frozen=True)
class EveSpec:
    """Attack configuration; the apparatus defaults to a lossless, perfectly
    aligned copy of the receiver."""

    enabled: bool = False
    apparatus: AmzSpec = field(default_factory=ideal_amz)
    resend_on_no_click: str = "vacuum"

    def __post_init__(self) -> None:
        if self.resend_on_no_click != "vacuum":
            raise ValueError("only the 'vacuum' no-click policy is supported")


def outcome_probabilities(state: TimeBinState, spec: EveSpec) -> np.ndarray:
    """(7,) vector: six slot/port outcome probabilities plus no-outcome."""
    dist = bob_transform(state, spec.apparatus)
    flat = dist.p.reshape(6)
    return np.concatenate([flat, [1.0 - flat.sum()]])


def resend_state(outcome: int) -> TimeBinState:
    """Canonical state (or vacuum) for a flattened outcome index."""
    idx = int(OUTCOME_TO_STATE_INDEX[outcome])
    if idx == VACUUM_INDEX:
        return vacuum_state()
    return canonical_link_state(CANONICAL_STATES[idx])


def attack(state: TimeBinState, spec: EveSpec, rng: np.random.Generator) -> TimeBinState:
    """Measure one pulse and forward the re-prepared state."""
    if not spec.enabled:
        return state
    probs = outcome_probabilities(state, spec)
    outcome = int(np.searchsorted(np.cumsum(probs), rng.random()))
    return resend_state(min(outcome, 6))


def attack_outcome_table(spec: EveSpec, input_states: list[TimeBinState]) -> np.ndarray:
    """(n_states, 7) outcome probabilities for a fixed set of input states."""
    return np.stack([outcome_probabilities(s, spec) for s in input_states])


def attack_batch(
    state_indices: np.ndarray,
    outcome_cum: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised attack over pulses grouped by input-state index.

    ``outcome_cum`` holds cumulative outcome probabilities per input state,
    shape (n_states, 7).  Returns (outcome index 0..6, resent-state index
    0..4) per pulse.
    """
    u = rng.random(state_indices.size)
    outcomes = np.empty(state_indices.size, dtype=np.uint8)
    for k in range(outcome_cum.shape[0]):
        mask = state_indices == k
        if np.any(mask):
            outcomes[mask] = np.searchsorted(outcome_cum[k], u[mask]).astype(np.uint8)
    np.minimum(outcomes, 6, out=outcomes)
    return outcomes, OUTCOME_TO_STATE_INDEX[outcomes]


def _classify_cell(cell: int) -> tuple[Basis, int]:
    slot, port = Slot(cell // 2), Port(cell % 2)
    if slot == Slot.S1:
        return Basis.Z, 0
    if slot == Slot.S3:
        return Basis.Z, 1
    return Basis.X, 0 if port == Port.D1 else 1


def enumerate_attack_qber(
    spec: EveSpec, bob_spec: AmzSpec | None = None
) -> dict[Basis, float]:
    """Exact sifted QBER per basis via the full probability tree.

    Single-photon abstraction: each stage yields an outcome with
    probability equal to its cell weight.  The transmitter's four states
    are equiprobable; only receiver outcomes whose measured basis matches
    the preparation basis contribute (the sifted set).  Channel loss
    between the attacker and receiver scales every branch equally and so
    cancels; it is omitted.
    """
    bob_spec = bob_spec if bob_spec is not None else ideal_amz()
    if not spec.enabled:
        return {Basis.Z: 0.0, Basis.X: 0.0}
    errors = {Basis.Z: 0.0, Basis.X: 0.0}
    sifted = {Basis.Z: 0.0, Basis.X: 0.0}
    for state in CANONICAL_STATES:
        weight_state = 0.25
        eve_probs = outcome_probabilities(canonical_link_state(state), spec)
        for outcome in range(6):  # no-outcome branch forwards vacuum: no events
            w1 = float(eve_probs[outcome])
            if w1 == 0.0:
                continue
            forwarded = resend_state(outcome)
            bob_probs = bob_transform(forwarded, bob_spec).p.reshape(6)
            for cell in range(6):
                w2 = float(bob_probs[cell])
                if w2 == 0.0:
                    continue
                measured_basis, measured_bit = _classify_cell(cell)
                if measured_basis != state.basis:
                    continue
                branch = weight_state * w1 * w2
                sifted[measured_basis] += branch
                if measured_bit != state.bit:
                    errors[measured_basis] += branch
    return {b: (errors[b] / sifted[b] if sifted[b] > 0 else 0.0) for b in (Basis.Z, Basis.X)}
