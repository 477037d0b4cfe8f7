"""End-to-end session orchestration: source -> transmitter -> channel
(-> attacker) -> receiver -> detectors -> sifting protocol -> summary.

Pulses are processed in fixed-size batches with per-batch random
substreams, so results are reproducible for a given (seed, config) and the
batches could in principle be evaluated in parallel and merged by pulse
index.  Within a batch everything is vectorised over numpy arrays; the
only per-state work is building the six click probabilities once, since a
session sees at most five distinct incoming states (the four canonical
ones plus vacuum when the attacker suppresses a pulse).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import eavesdrop
from .channel import ChannelSpec, transmittance
from .config import SessionConfig
from .detection import (
    DOMAIN_ALICE,
    DOMAIN_DETECT,
    DOMAIN_EVE,
    DOMAIN_JITTER,
    DOMAIN_SAMPLE,
    DOMAIN_SWEEP,
    ApdSpec,
    RngHandle,
    cell_click_probabilities,
    detect_batch,
    expected_event_rates,
)
from .optics import (
    CANONICAL_STATES,
    AmzSpec,
    SlotPortDistribution,
    TimeBinState,
    bob_transform,
    canonical_link_state,
    link_state,
    vacuum_state,
)
from .protocol import (
    ClassifiedEvents,
    InsufficientKeyError,
    PulseTrain,
    SiftedKey,
    classify_arrays,
    run_protocol,
)

BATCH_SIZE = 1 << 20  # fixed: part of the reproducibility contract

_SLOT_S2 = 1
_SLOT_S3 = 2


@dataclass(frozen=True)
class SessionSummary:
    """Counts and rates of one completed session.

    events_registered counts detector registrations before any
    conventional-mode filtering; conclusive_count the basis-matched subset
    that survives sifting (before sample disclosure).  qber is the
    protocol's sampled estimate, while the true_* fields are simulator
    diagnostics computed by comparing both stations' full sifted strings,
    which no real deployment could do.
    """

    pulses_sent: int
    events_registered: int
    conclusive_count: int
    sifted_length: int
    qber: float
    sifted_rate_per_pulse: float
    dark_fraction_estimate: float
    conclusive_z: int = 0
    conclusive_x: int = 0
    true_qber: float = 0.0
    true_qber_z: float = 0.0
    true_qber_x: float = 0.0

    CSV_COLUMNS = (
        "pulses_sent",
        "events_registered",
        "conclusive_count",
        "sifted_length",
        "qber",
        "sifted_rate_per_pulse",
        "dark_fraction_estimate",
        "conclusive_z",
        "conclusive_x",
        "true_qber",
        "true_qber_z",
        "true_qber_x",
    )


@dataclass
class SessionTally:
    """Raw material a finished (or empty) session hands to summarize()."""

    n_pulses: int
    events_registered: int
    records: PulseTrain | None
    classifications: ClassifiedEvents
    alice_key: SiftedKey | None
    bob_key: SiftedKey | None
    dark_register_prob: float = 0.0

    @staticmethod
    def empty() -> "SessionTally":
        return SessionTally(
            n_pulses=0,
            events_registered=0,
            records=None,
            classifications=ClassifiedEvents(
                np.empty(0, np.int64), np.empty(0, np.uint8), np.empty(0, np.uint8)
            ),
            alice_key=None,
            bob_key=None,
        )


@dataclass
class SessionResult:
    summary: SessionSummary
    alice_key: SiftedKey
    bob_key: SiftedKey
    records: PulseTrain
    classifications: ClassifiedEvents
    transcript: list


def summarize(tally: SessionTally) -> SessionSummary:
    """Counts, rates and diagnostic error rates for a session tally."""
    ev = tally.classifications
    if tally.n_pulses == 0 or tally.records is None:
        return SessionSummary(0, 0, 0, 0, 0.0, 0.0, 0.0)
    matched = tally.records.bases[ev.pulse_indices] == ev.bases
    kept_idx = ev.pulse_indices[matched]
    kept_bases = ev.bases[matched]
    errors = tally.records.bits[kept_idx] != ev.bits[matched]
    conclusive = int(kept_idx.size)
    z_mask = kept_bases == 0
    conclusive_z = int(np.count_nonzero(z_mask))
    conclusive_x = conclusive - conclusive_z

    def _rate(err_mask: np.ndarray, denom: int) -> float:
        return float(np.count_nonzero(err_mask)) / denom if denom else 0.0

    qber_estimate = 0.0
    sifted_length = 0
    if tally.alice_key is not None:
        sifted_length = len(tally.alice_key)
        if not math.isnan(tally.alice_key.qber_estimate):
            qber_estimate = tally.alice_key.qber_estimate
    dark_fraction = (
        tally.n_pulses * tally.dark_register_prob / tally.events_registered
        if tally.events_registered
        else 0.0
    )
    return SessionSummary(
        pulses_sent=tally.n_pulses,
        events_registered=tally.events_registered,
        conclusive_count=conclusive,
        sifted_length=sifted_length,
        qber=qber_estimate,
        sifted_rate_per_pulse=conclusive / tally.n_pulses,
        dark_fraction_estimate=min(dark_fraction, 1.0),
        conclusive_z=conclusive_z,
        conclusive_x=conclusive_x,
        true_qber=_rate(errors, conclusive),
        true_qber_z=_rate(errors & z_mask, conclusive_z),
        true_qber_x=_rate(errors & ~z_mask, conclusive_x),
    )


# ---------------------------------------------------------------------------
# Per-state click-probability tables
# ---------------------------------------------------------------------------


def _prepared_states(alice_amz: AmzSpec) -> list[TimeBinState]:
    """Normalized link states including the transmitter's phase offset."""
    states = []
    for state in CANONICAL_STATES:
        amps = canonical_link_state(state)
        late = complex(amps.bins[1, 0]) * np.exp(1j * alice_amz.phase_offset_rad)
        states.append(link_state(complex(amps.bins[0, 0]), late))
    return states


def _receiver_distributions(
    incoming: list[TimeBinState], chan: ChannelSpec, bob_amz: AmzSpec
) -> list[SlotPortDistribution]:
    scale = math.sqrt(transmittance(chan))
    return [bob_transform(s.scaled(scale), bob_amz) for s in incoming]


def _click_table(
    dists: list[SlotPortDistribution], mu: float, apds: tuple[ApdSpec, ApdSpec]
) -> np.ndarray:
    """(n_states, 6) float32 click probabilities."""
    return np.stack(
        [cell_click_probabilities(d, mu, apds) for d in dists]
    ).astype(np.float32)


def _jittered_s2_overrides(
    q: np.ndarray,
    state_indices: np.ndarray,
    incoming: list[TimeBinState],
    chan: ChannelSpec,
    bob_amz: AmzSpec,
    mu: float,
    apds: tuple[ApdSpec, ApdSpec],
    deltas: np.ndarray,
) -> None:
    """Recompute the two S2 click probabilities per pulse for phase noise.

    Only the central-slot interference depends on the phase, so edge-slot
    probabilities stay table-driven.  ``q`` is modified in place.
    """
    t_chan = transmittance(chan)
    loss = bob_amz.excess_transmittance
    for k, state in enumerate(incoming):
        mask = state_indices == k
        if not np.any(mask):
            continue
        c0 = complex(state.bins[0, 0]) * math.sqrt(t_chan)
        c1 = complex(state.bins[1, 0]) * math.sqrt(t_chan)
        base = (abs(c0) ** 2 + abs(c1) ** 2) / 4.0
        inter = c0 * c1.conjugate()
        d = deltas[mask]
        cross = 2.0 * bob_amz.visibility * (
            np.cos(d) * inter.real - np.sin(d) * inter.imag
        ) / 4.0
        for port, sign in ((0, -1.0), (1, +1.0)):
            apd = apds[port]
            p_cell = loss * (base + sign * cross)
            q[mask, 2 * _SLOT_S2 + port] = 1.0 - (1.0 - apd.dark_per_gate) * np.exp(
                -apd.efficiency * mu * p_cell
            )


# ---------------------------------------------------------------------------
# Main entry points
# ---------------------------------------------------------------------------


def run_session(config: SessionConfig, record_transcript: bool = False) -> SessionResult:
    """Simulate a full key-distribution session.

    Raises InsufficientKeyError when the sifted key cannot support the
    configured disclosure fraction (including empty sessions).
    """
    config.validate()
    rng = RngHandle(config.seed)
    n = config.n_pulses
    if n == 0:
        raise InsufficientKeyError("zero-pulse session yields no key to sample")

    apds = (config.apd_d0, config.apd_d1)
    mu = config.source.mu
    chan = dataclasses.replace(config.channel, eve_enabled=config.eve.enabled)

    # The phase riding on a prepared state's late bin combines with the
    # receiver-arm offset inside bob_transform, so the effective
    # interference phase per leg is (receiver offset - transmitter offset).
    prepared = _prepared_states(config.alice_amz)
    bob_amz = config.bob_amz
    eve_on = config.eve.enabled
    if eve_on:
        eve_cum = np.cumsum(eavesdrop.attack_outcome_table(config.eve, prepared), axis=1)
        sigma_eve_leg = math.hypot(
            config.alice_amz.phase_jitter_rad, config.eve.apparatus.phase_jitter_rad
        )
        # Re-prepared states are fresh canonical ones: only the receiver's
        # own jitter acts on the final leg.
        incoming = [canonical_link_state(s) for s in CANONICAL_STATES] + [vacuum_state()]
        sigma_bob_leg = config.bob_amz.phase_jitter_rad
    else:
        incoming = prepared
        sigma_bob_leg = math.hypot(
            config.alice_amz.phase_jitter_rad, config.bob_amz.phase_jitter_rad
        )

    dists = _receiver_distributions(incoming, chan, bob_amz)
    q_table = _click_table(dists, mu, apds)

    bits_all = np.empty(n, dtype=np.uint8)
    bases_all = np.empty(n, dtype=np.uint8)
    ev_idx: list[np.ndarray] = []
    ev_slot: list[np.ndarray] = []
    ev_port: list[np.ndarray] = []
    events_registered = 0

    n_batches = (n + BATCH_SIZE - 1) // BATCH_SIZE
    for b in range(n_batches):
        lo = b * BATCH_SIZE
        hi = min(lo + BATCH_SIZE, n)
        m = hi - lo
        a_rng = rng.indexed_stream(DOMAIN_ALICE, b)
        bits = a_rng.integers(0, 2, size=m, dtype=np.uint8)
        bases = a_rng.integers(0, 2, size=m, dtype=np.uint8)
        bits_all[lo:hi] = bits
        bases_all[lo:hi] = bases
        state_idx = (2 * bases + bits).astype(np.uint8)

        if eve_on:
            e_rng = rng.indexed_stream(DOMAIN_EVE, b)
            if sigma_eve_leg > 0.0:
                j_rng = rng.indexed_stream(DOMAIN_JITTER, 2 * b)
                det_idx = _attack_batch_jittered(
                    state_idx, prepared, config.eve, sigma_eve_leg, e_rng, j_rng
                )
            else:
                _, det_idx = eavesdrop.attack_batch(state_idx, eve_cum, e_rng)
        else:
            det_idx = state_idx

        q = q_table[det_idx]
        if sigma_bob_leg > 0.0:
            j2_rng = rng.indexed_stream(DOMAIN_JITTER, 2 * b + 1)
            deltas = bob_amz.phase_offset_rad + sigma_bob_leg * j2_rng.standard_normal(m)
            _jittered_s2_overrides(
                q, det_idx, incoming, chan, bob_amz, mu, apds, deltas
            )

        d_rng = rng.indexed_stream(DOMAIN_DETECT, b)
        registered, slot, port, _ = detect_batch(q, d_rng)
        events_registered += int(np.count_nonzero(registered))
        keep = registered
        if config.conventional_mode:
            keep = registered & (slot != _SLOT_S3)
        where = np.nonzero(keep)[0]
        ev_idx.append(where.astype(np.int64) + lo)
        ev_slot.append(slot[where])
        ev_port.append(port[where])

    records = PulseTrain(bits_all, bases_all)
    idx = np.concatenate(ev_idx) if ev_idx else np.empty(0, np.int64)
    slots = np.concatenate(ev_slot) if ev_slot else np.empty(0, np.uint8)
    ports = np.concatenate(ev_port) if ev_port else np.empty(0, np.uint8)
    meas_bases, meas_bits = classify_arrays(slots, ports)
    classifications = ClassifiedEvents(idx, meas_bases, meas_bits)

    key_a, key_b, transcript = run_protocol(
        records,
        classifications,
        config.sample_fraction,
        rng.stream(DOMAIN_SAMPLE),
        record=record_transcript,
    )

    vacuum_dist = SlotPortDistribution(np.zeros((3, 2)), 1.0)
    dark_register = float(expected_event_rates(vacuum_dist, 0.0, apds).sum())
    tally = SessionTally(
        n_pulses=n,
        events_registered=events_registered,
        records=records,
        classifications=classifications,
        alice_key=key_a,
        bob_key=key_b,
        dark_register_prob=dark_register,
    )
    return SessionResult(
        summary=summarize(tally),
        alice_key=key_a,
        bob_key=key_b,
        records=records,
        classifications=classifications,
        transcript=transcript,
    )


def _attack_batch_jittered(
    state_idx: np.ndarray,
    prepared: list[TimeBinState],
    eve_spec: "eavesdrop.EveSpec",
    sigma: float,
    e_rng: np.random.Generator,
    j_rng: np.random.Generator,
) -> np.ndarray:
    """Attack sampling with per-pulse phase noise on the intercepted leg."""
    m = state_idx.size
    deltas = eve_spec.apparatus.phase_offset_rad + sigma * j_rng.standard_normal(m)
    u = e_rng.random(m)
    out = np.empty(m, dtype=np.uint8)
    for k, state in enumerate(prepared):
        mask = state_idx == k
        if not np.any(mask):
            continue
        c0 = complex(state.bins[0, 0])
        c1 = complex(state.bins[1, 0])
        loss = eve_spec.apparatus.excess_transmittance
        base_edge0 = loss * abs(c0) ** 2 / 4.0
        base_edge1 = loss * abs(c1) ** 2 / 4.0
        s2_base = loss * (abs(c0) ** 2 + abs(c1) ** 2) / 4.0
        inter = c0 * c1.conjugate()
        d = deltas[mask]
        cross = loss * 2.0 * eve_spec.apparatus.visibility * (
            np.cos(d) * inter.real - np.sin(d) * inter.imag
        ) / 4.0
        probs = np.empty((d.size, 7))
        probs[:, 0] = base_edge0
        probs[:, 1] = base_edge0
        probs[:, 2] = s2_base - cross
        probs[:, 3] = s2_base + cross
        probs[:, 4] = base_edge1
        probs[:, 5] = base_edge1
        probs[:, 6] = 1.0 - probs[:, :6].sum(axis=1)
        cum = np.cumsum(probs, axis=1)
        pick = (u[mask, None] >= cum).sum(axis=1)
        out[mask] = np.minimum(pick, 6).astype(np.uint8)
    return eavesdrop.OUTCOME_TO_STATE_INDEX[out]


# ---------------------------------------------------------------------------
# Exact profile and parameter sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProfileRow:
    state: str
    slot: str
    port: str
    probability: float


def profile_rows(config: SessionConfig, sampled_pulses: int = 0) -> list[ProfileRow]:
    """Per-state intensity profile rows: the transmitter's two output bins
    followed by the receiver's six slot/port probabilities.

    With sampled_pulses > 0 the receiver probabilities are estimated by
    Monte Carlo instead: per-cell click frequencies are inverted through
    the detector response, emulating a classical intensity measurement.
    The transmitter rows stay analytic in both modes.
    """
    config.validate()
    rng = RngHandle(config.seed)
    apds = (config.apd_d0, config.apd_d1)
    chan = dataclasses.replace(config.channel, eve_enabled=False)
    prepared = _prepared_states(config.alice_amz)
    dists = _receiver_distributions(prepared, chan, config.bob_amz)
    rows: list[ProfileRow] = []
    for k, state in enumerate(CANONICAL_STATES):
        label = state.label()
        amps = prepared[k].bins[:, 0]
        rows.append(ProfileRow(label, "bin0", "link", float(abs(amps[0]) ** 2)))
        rows.append(ProfileRow(label, "bin1", "link", float(abs(amps[1]) ** 2)))
        if sampled_pulses > 0:
            p = _sampled_cell_probabilities(
                dists[k], config.source.mu, apds, sampled_pulses,
                rng.indexed_stream(DOMAIN_DETECT, 1000 + k),
            )
        else:
            p = dists[k].p
        for slot_i, slot_name in enumerate(("S1", "S2", "S3")):
            for port_i, port_name in enumerate(("D0", "D1")):
                rows.append(ProfileRow(label, slot_name, port_name, float(p[slot_i, port_i])))
    return rows


def _sampled_cell_probabilities(
    dist: SlotPortDistribution,
    mu: float,
    apds: tuple[ApdSpec, ApdSpec],
    n_pulses: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Invert empirical click frequencies through the detector response."""
    q = cell_click_probabilities(dist, mu, apds).astype(np.float32)
    counts = np.zeros(6, dtype=np.int64)
    remaining = n_pulses
    while remaining > 0:
        m = min(remaining, BATCH_SIZE)
        u = rng.random((m, 6), dtype=np.float32)
        counts += (u < q).sum(axis=0)
        remaining -= m
    freq = counts / n_pulses
    p = np.zeros(6)
    for cell in range(6):
        apd = apds[cell % 2]
        eff = apd.efficiency * mu
        if eff <= 0.0:
            continue
        surv = (1.0 - min(freq[cell], 1.0 - 1e-12)) / (1.0 - apd.dark_per_gate)
        p[cell] = max(0.0, -math.log(surv) / eff)
    return p.reshape(3, 2)


SWEEP_AXES = ("length_km", "mu", "dark")


def sweep(config: SessionConfig, axis: str, values: list[float]) -> list[tuple[float, SessionSummary]]:
    """Run one session per value along an axis, with derived sub-seeds."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not values:
        raise ValueError("sweep requires at least one value")
    root = RngHandle(config.seed)
    results = []
    for i, value in enumerate(values):
        sub_seed = root.child_seed(DOMAIN_SWEEP, i)
        cfg = _with_axis_value(config, axis, value)
        cfg = dataclasses.replace(cfg, seed=sub_seed)
        results.append((value, run_session(cfg).summary))
    return results


def _with_axis_value(config: SessionConfig, axis: str, value: float) -> SessionConfig:
    if axis == "length_km":
        return dataclasses.replace(
            config, channel=dataclasses.replace(config.channel, length_km=value)
        )
    if axis == "mu":
        return dataclasses.replace(
            config, source=dataclasses.replace(config.source, mu=value)
        )
    return dataclasses.replace(
        config,
        apd_d0=dataclasses.replace(config.apd_d0, dark_per_gate=value),
        apd_d1=dataclasses.replace(config.apd_d1, dark_per_gate=value),
    )
