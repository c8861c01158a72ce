"""Seed chains and rotating ephemeral identifiers for proximity tracing.

A device holds one 32-byte secret per day.  Tomorrow's secret is the
SHA-256 of today's, so a positive user can publish a whole infectious
window as (first_day, list of secrets) and every contact re-derives the
broadcast IDs locally.  Within a day the broadcast ID rotates every
15 minutes (96 epochs/day), each ID being a domain-separated hash of the
daily secret and the epoch index.

Two deployment modes share this code path: in decentralized mode seeds
stay on the device until voluntarily published; in centralized mode a
device escrows its daily seeds with the authority up front so the
authority can resolve observed IDs back to a registrant token.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

EPOCHS_PER_DAY = 96  # 15-minute epochs
SEED_BYTES = 32
EPHID_BYTES = 16

_EPHID_DOMAIN = b"EPHID"


class NonContiguousDays(ValueError):
    """Seed list for a report has gaps or is out of order."""


class DuplicateRegistration(ValueError):
    """A (registrant, day) pair was escrowed twice."""


@dataclass(frozen=True)
class DailySeed:
    """One day's secret in the hash chain."""

    day: int
    secret: bytes

    def __post_init__(self) -> None:
        if self.day < 0:
            raise ValueError(f"day must be >= 0, got {self.day}")
        if len(self.secret) != SEED_BYTES:
            raise ValueError(f"secret must be {SEED_BYTES} bytes, got {len(self.secret)}")


@dataclass(frozen=True)
class EphemeralID:
    """A 16-byte rotating broadcast identifier."""

    bytes: bytes

    def __post_init__(self) -> None:
        if len(self.bytes) != EPHID_BYTES:
            raise ValueError(f"ephemeral id must be {EPHID_BYTES} bytes, got {len(self.bytes)}")

    def hex(self) -> str:
        return self.bytes.hex()


@dataclass(frozen=True)
class IdSchedule:
    """All 96 ephemeral IDs a device broadcasts on one day."""

    day: int
    ids: tuple[EphemeralID, ...]

    def __post_init__(self) -> None:
        if len(self.ids) != EPOCHS_PER_DAY:
            raise ValueError(f"schedule must hold {EPOCHS_PER_DAY} ids, got {len(self.ids)}")


@dataclass(frozen=True)
class ExposureReport:
    """Published material from which a positive user's IDs re-derive.

    Covers a contiguous day range starting at ``first_day``; ``seeds``
    holds the raw 32-byte secrets in day order.
    """

    first_day: int
    seeds: tuple[bytes, ...]

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("report must cover at least one day")
        for s in self.seeds:
            if len(s) != SEED_BYTES:
                raise ValueError("every report seed must be 32 bytes")

    @property
    def last_day(self) -> int:
        return self.first_day + len(self.seeds) - 1

    def daily_seeds(self) -> list[DailySeed]:
        return [DailySeed(self.first_day + i, s) for i, s in enumerate(self.seeds)]

    def to_bytes(self) -> bytes:
        """Wire encoding: first_day u64 BE, seed count u32 BE, raw secrets."""
        out = self.first_day.to_bytes(8, "big") + len(self.seeds).to_bytes(4, "big")
        return out + b"".join(self.seeds)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ExposureReport":
        if len(data) < 12:
            raise ValueError("truncated report header")
        first_day = int.from_bytes(data[:8], "big")
        count = int.from_bytes(data[8:12], "big")
        body = data[12:]
        if len(body) != count * SEED_BYTES:
            raise ValueError(f"expected {count} seeds ({count * SEED_BYTES} bytes), got {len(body)} bytes")
        seeds = tuple(body[i * SEED_BYTES : (i + 1) * SEED_BYTES] for i in range(count))
        return cls(first_day, seeds)


def derive_next_seed(seed: DailySeed) -> DailySeed:
    """Advance the chain one day: secret' = SHA-256(secret)."""
    return DailySeed(seed.day + 1, hashlib.sha256(seed.secret).digest())


def derive_epoch_id(secret: bytes, epoch: int) -> bytes:
    """Raw 16-byte ID for one epoch of one daily secret."""
    digest = hashlib.sha256(secret + _EPHID_DOMAIN + epoch.to_bytes(4, "big")).digest()
    return digest[:EPHID_BYTES]


def expand_epoch_ids(seed: DailySeed) -> IdSchedule:
    """Derive the full day's broadcast schedule from a daily seed."""
    ids = tuple(EphemeralID(derive_epoch_id(seed.secret, j)) for j in range(EPOCHS_PER_DAY))
    return IdSchedule(seed.day, ids)


def report_from_seeds(seeds: list[DailySeed]) -> ExposureReport:
    """Pack a contiguous run of daily seeds into a publishable report."""
    if not seeds:
        raise NonContiguousDays("cannot build a report from zero seeds")
    for prev, cur in zip(seeds, seeds[1:]):
        if cur.day != prev.day + 1:
            raise NonContiguousDays(f"day {cur.day} does not follow day {prev.day}")
    return ExposureReport(seeds[0].day, tuple(s.secret for s in seeds))


def report_id_set(report: ExposureReport) -> set[bytes]:
    """Every raw ephemeral ID derivable from a report (all days, all epochs)."""
    out: set[bytes] = set()
    for secret in report.seeds:
        for j in range(EPOCHS_PER_DAY):
            out.add(derive_epoch_id(secret, j))
    return out


@dataclass(frozen=True)
class EscrowEntry:
    """Authority-side record of one escrowed daily seed (centralized mode)."""

    registrant: str
    day: int


class EscrowTable:
    """Authority-side ID→registrant resolution for the centralized variant.

    Registration expands the seed to its 96 IDs immediately; no location
    data is ever attached.  Resolution works both on raw IDs and on
    SHA-256 digests of IDs (the form contacts upload).
    """

    def __init__(self) -> None:
        self._entries: set[tuple[str, int]] = set()
        self._by_id: dict[bytes, str] = {}
        self._by_digest: dict[str, str] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def escrow_register(self, seed: DailySeed, registrant: str) -> EscrowEntry:
        key = (registrant, seed.day)
        if key in self._entries:
            raise DuplicateRegistration(f"registrant {registrant!r} already escrowed day {seed.day}")
        self._entries.add(key)
        for j in range(EPOCHS_PER_DAY):
            raw = derive_epoch_id(seed.secret, j)
            self._by_id[raw] = registrant
            self._by_digest[hashlib.sha256(raw).hexdigest()] = registrant
        return EscrowEntry(registrant, seed.day)

    def resolve(self, ephemeral_id: EphemeralID | bytes) -> str | None:
        raw = ephemeral_id.bytes if isinstance(ephemeral_id, EphemeralID) else ephemeral_id
        return self._by_id.get(raw)

    def resolve_digest(self, digest_hex: str) -> str | None:
        return self._by_digest.get(digest_hex)


def contact_digest(ephemeral_id: EphemeralID | bytes) -> str:
    """SHA-256 hex digest of an observed ID, the centralized upload form."""
    raw = ephemeral_id.bytes if isinstance(ephemeral_id, EphemeralID) else ephemeral_id
    return hashlib.sha256(raw).hexdigest()
