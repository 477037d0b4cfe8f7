"""CSV emission/ingestion and plain-text rendering of results.

Every CSV written here has a fixed, documented column order and round-trips
through the readers in this module:

    profile.csv   state,slot,port,probability
    summary.csv   SessionSummary.CSV_COLUMNS, one data row
    sweep.csv     <axis>,registered_rate,sifted_rate,qber
"""

from __future__ import annotations

import csv
from pathlib import Path

from .session import ProfileRow, SessionSummary

PROFILE_COLUMNS = ("state", "slot", "port", "probability")
SWEEP_VALUE_COLUMNS = ("registered_rate", "sifted_rate", "qber")

_EIGHTHS = " ▏▎▍▌▋▊▉"
_FULL = "█"


def bar(probability: float, width: int = 48) -> str:
    """Proportional bar: ``width`` characters represent probability 1."""
    cells = max(0.0, probability) * width
    full, frac = divmod(cells, 1.0)
    eighth = int(round(frac * 8))
    if eighth == 8:
        full, eighth = full + 1, 0
    return _FULL * int(full) + (_EIGHTHS[eighth] if eighth else "")


def write_profile_csv(path: str | Path, rows: list[ProfileRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROFILE_COLUMNS)
        for row in rows:
            writer.writerow([row.state, row.slot, row.port, repr(row.probability)])


def read_profile_csv(path: str | Path) -> list[ProfileRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PROFILE_COLUMNS:
            raise ValueError(f"unexpected profile columns: {reader.fieldnames}")
        return [
            ProfileRow(r["state"], r["slot"], r["port"], float(r["probability"]))
            for r in reader
        ]


def format_profile_text(rows: list[ProfileRow]) -> str:
    lines = []
    current = None
    for row in rows:
        if row.state != current:
            current = row.state
            lines.append(f"state {current}")
        lines.append(
            f"  {row.slot:>4} {row.port:<4} {row.probability:8.6f} {bar(row.probability)}"
        )
    return "\n".join(lines)


def write_summary_csv(path: str | Path, summary: SessionSummary) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SessionSummary.CSV_COLUMNS)
        writer.writerow([repr(getattr(summary, c)) for c in SessionSummary.CSV_COLUMNS])


def read_summary_csv(path: str | Path) -> SessionSummary:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SessionSummary.CSV_COLUMNS:
            raise ValueError(f"unexpected summary columns: {reader.fieldnames}")
        row = next(iter(reader))
    ints = {
        "pulses_sent", "events_registered", "conclusive_count", "sifted_length",
        "conclusive_z", "conclusive_x",
    }
    return SessionSummary(
        **{c: (int(row[c]) if c in ints else float(row[c])) for c in SessionSummary.CSV_COLUMNS}
    )


def format_summary_text(summary: SessionSummary) -> str:
    return "\n".join(
        [
            f"pulses sent            {summary.pulses_sent}",
            f"events registered      {summary.events_registered}",
            f"conclusive (sifted)    {summary.conclusive_count} "
            f"(Z {summary.conclusive_z} / X {summary.conclusive_x})",
            f"final key length       {summary.sifted_length}",
            f"sifted rate per pulse  {summary.sifted_rate_per_pulse:.6g}",
            f"QBER (sampled)         {summary.qber:.6g}",
            f"QBER (diagnostic)      {summary.true_qber:.6g} "
            f"(Z {summary.true_qber_z:.6g} / X {summary.true_qber_x:.6g})",
            f"dark fraction estimate {summary.dark_fraction_estimate:.6g}",
        ]
    )


def write_sweep_csv(
    path: str | Path, axis: str, results: list[tuple[float, SessionSummary]]
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow((axis,) + SWEEP_VALUE_COLUMNS)
        for value, summary in results:
            registered = (
                summary.events_registered / summary.pulses_sent if summary.pulses_sent else 0.0
            )
            writer.writerow(
                [repr(value), repr(registered), repr(summary.sifted_rate_per_pulse),
                 repr(summary.qber)]
            )


def read_sweep_csv(path: str | Path) -> tuple[str, list[dict[str, float]]]:
    """Returns (axis name, rows); each row maps column name to value."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = tuple(reader.fieldnames or ())
        if len(names) != 4 or names[1:] != SWEEP_VALUE_COLUMNS:
            raise ValueError(f"unexpected sweep columns: {names}")
        rows = [{k: float(v) for k, v in r.items()} for r in reader]
    return names[0], rows


def format_sweep_text(axis: str, results: list[tuple[float, SessionSummary]]) -> str:
    lines = [f"{axis:>12} {'registered':>12} {'sifted':>12} {'qber':>10}"]
    for value, summary in results:
        registered = (
            summary.events_registered / summary.pulses_sent if summary.pulses_sent else 0.0
        )
        lines.append(
            f"{value:>12.6g} {registered:>12.6g} "
            f"{summary.sifted_rate_per_pulse:>12.6g} {summary.qber:>10.6g}"
        )
    return "\n".join(lines)
