"""Device-local log of observed ephemeral IDs and local exposure matching.

The store never leaves the device: matching a published report against it
is a pure local computation, and the only things that ever cross the
module boundary are per-day exposure events (decentralized mode) or
qualifying contact-ID digests (centralized mode).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .crypto_ids import EPHID_BYTES, ExposureReport, contact_digest, report_id_set

RETENTION_DAYS = 14
EXPOSURE_MIN_MINUTES = 15  # cumulative per day
ATTENUATION_CUTOFF = 60  # lower = closer; records above this are ignored


@dataclass(slots=True)
class EncounterRecord:
    """One observation of a foreign ephemeral ID during one epoch."""

    observed: bytes
    day: int
    epoch: int
    duration_min: int
    attenuation: int

    def __post_init__(self) -> None:
        if len(self.observed) != EPHID_BYTES:
            raise ValueError(f"observed id must be {EPHID_BYTES} bytes")
        if not 0 <= self.epoch <= 95:
            raise ValueError(f"epoch must be in 0..95, got {self.epoch}")
        if not 1 <= self.duration_min <= 15:
            raise ValueError(f"duration_min must be in 1..15, got {self.duration_min}")
        if not 0 <= self.attenuation <= 100:
            raise ValueError(f"attenuation must be in 0..100, got {self.attenuation}")


@dataclass(frozen=True)
class ExposureEvent:
    """One day on which cumulative matched contact crossed the threshold."""

    day: int
    cumulative_min: int
    matched_epochs: tuple[int, ...]


class ContactStore:
    """Append-only encounter log with retention pruning.

    Duplicates are kept deliberately: the same (id, epoch) observed twice
    is a re-observation, and its durations add up.
    """

    def __init__(self, records: Iterable[EncounterRecord] = ()) -> None:
        self._records: list[EncounterRecord] = list(records)

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[EncounterRecord]:
        return list(self._records)

    def record_encounter(self, rec: EncounterRecord) -> None:
        self._records.append(rec)

    def prune(self, today: int, retention_days: int = RETENTION_DAYS) -> None:
        """Drop records at or beyond the retention horizon; idempotent."""
        cutoff = today - retention_days
        self._records = [r for r in self._records if r.day > cutoff]

    def check_exposure(
        self,
        report: ExposureReport,
        *,
        min_minutes: int = EXPOSURE_MIN_MINUTES,
        attenuation_cutoff: int = ATTENUATION_CUTOFF,
    ) -> list[ExposureEvent]:
        """Match a published report against the local log.

        A record matches when its observed ID re-derives from any of the
        report's seeds and it was close enough.  Matched minutes accumulate
        per day; each day at or above ``min_minutes`` yields one event.
        """
        return self.check_exposure_ids(
            report_id_set(report), min_minutes=min_minutes, attenuation_cutoff=attenuation_cutoff
        )

    def check_exposure_ids(
        self,
        ids: set[bytes],
        *,
        min_minutes: int = EXPOSURE_MIN_MINUTES,
        attenuation_cutoff: int = ATTENUATION_CUTOFF,
    ) -> list[ExposureEvent]:
        """Same as check_exposure but against a pre-expanded ID set."""
        minutes: dict[int, int] = {}
        epochs: dict[int, set[int]] = {}
        for r in self._records:
            if r.attenuation > attenuation_cutoff or r.observed not in ids:
                continue
            minutes[r.day] = minutes.get(r.day, 0) + r.duration_min
            epochs.setdefault(r.day, set()).add(r.epoch)
        return [
            ExposureEvent(day, total, tuple(sorted(epochs[day])))
            for day, total in sorted(minutes.items())
            if total >= min_minutes
        ]

    def qualifying_contact_digests(
        self,
        window: tuple[int, int] | None = None,
        *,
        min_minutes: int = EXPOSURE_MIN_MINUTES,
        attenuation_cutoff: int = ATTENUATION_CUTOFF,
    ) -> list[str]:
        """Digests of observed IDs whose per-day contact crossed the threshold.

        This is the client-side filter for centralized uploads.  IDs rotate
        per epoch, so grouping by (id, day) is the finest aggregation a
        device can do without being able to link a contact's IDs.
        """
        minutes: dict[tuple[bytes, int], int] = {}
        for r in self._records:
            if r.attenuation > attenuation_cutoff:
                continue
            if window is not None and not window[0] <= r.day <= window[1]:
                continue
            key = (r.observed, r.day)
            minutes[key] = minutes.get(key, 0) + r.duration_min
        qualified = sorted({obs for (obs, _day), total in minutes.items() if total >= min_minutes})
        return [contact_digest(obs) for obs in qualified]

    # -- simulator checkpointing ------------------------------------------

    def export_lines(self) -> list[str]:
        return [f"{r.day},{r.epoch},{r.duration_min},{r.attenuation},{r.observed.hex()}" for r in self._records]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.export_lines()) + ("\n" if self._records else ""))

    @classmethod
    def load(cls, path: str | Path) -> "ContactStore":
        store = cls()
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            day, epoch, duration, attenuation, observed = line.split(",")
            store.record_encounter(
                EncounterRecord(
                    observed=bytes.fromhex(observed),
                    day=int(day),
                    epoch=int(epoch),
                    duration_min=int(duration),
                    attenuation=int(attenuation),
                )
            )
        return store
