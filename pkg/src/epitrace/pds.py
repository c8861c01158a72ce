"""The citizen's personal data store: exclusive location history and
granularity-controlled sharing.

Raw location points never leave this module.  Everything that crosses the
boundary is either a coarsened visit list (at a granularity no finer than
the per-purpose policy minimum) or a contact-digest list, wrapped in a
payload carrying a fresh random pseudonym that is unlinkable to any
broadcast ephemeral ID.  Every share appends a consent record; the user
can stop collection or erase everything at any time.
"""

from __future__ import annotations

import json
import math
import random
import secrets
from bisect import insort
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .contact_store import ContactStore

PSEUDONYM_BYTES = 16
GRID_CELL_DEGREES = (0.001, 0.01, 0.1)
BIN_MINUTES = (1, 15, 60, 1440)

SNAPSHOT_SCHEMA = "epitrace-pds v1"


class TrackingStopped(RuntimeError):
    """Location collection was revoked; appends are rejected."""


class MissingMap(ValueError):
    """POI or municipality coarsening requested without a lookup map."""


class GranularityTooFine(ValueError):
    """Requested share granularity is finer than the purpose's minimum."""


class ConsentMissing(RuntimeError):
    """No active consent for the requested sharing purpose."""


class Purpose(Enum):
    CONTACT_UPLOAD = "contact_upload"
    LOCATION_UPLOAD = "location_upload"
    AGGREGATE_PARTICIPATION = "aggregate_participation"


class EraseScope(Enum):
    COLLECTION_ONLY = "collection_only"
    EVERYTHING = "everything"


class SpatialLevel(Enum):
    EXACT_POINT = "exact_point"
    GRID = "grid"
    POI = "poi"
    MUNICIPALITY = "municipality"


@dataclass(frozen=True, slots=True)
class LocationPoint:
    lat: float
    lon: float
    t: int

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"lat {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"lon {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class Granularity:
    """A spatial level plus a temporal bin width in minutes.

    Coarseness is ordered ExactPoint < Grid(0.001) < Grid(0.01) <
    Grid(0.1) <= POI <= Municipality on the spatial axis and by bin width
    on the temporal axis.
    """

    spatial: SpatialLevel
    cell_deg: float | None = None
    bin_minutes: int = 60

    def __post_init__(self) -> None:
        if self.spatial is SpatialLevel.GRID:
            if self.cell_deg not in GRID_CELL_DEGREES:
                raise ValueError(f"grid cell_deg must be one of {GRID_CELL_DEGREES}")
        elif self.cell_deg is not None:
            raise ValueError("cell_deg only applies to grid granularity")
        if self.bin_minutes not in BIN_MINUTES:
            raise ValueError(f"bin_minutes must be one of {BIN_MINUTES}")

    @property
    def spatial_rank(self) -> int:
        """Position in the coarseness order; higher = coarser."""
        if self.spatial is SpatialLevel.EXACT_POINT:
            return 0
        if self.spatial is SpatialLevel.GRID:
            return 1 + GRID_CELL_DEGREES.index(self.cell_deg)
        if self.spatial is SpatialLevel.POI:
            return 3  # at least as coarse as Grid(0.1)
        return 4  # municipality

    def at_least_as_coarse(self, other: "Granularity") -> bool:
        return self.spatial_rank >= other.spatial_rank and self.bin_minutes >= other.bin_minutes

    @classmethod
    def grid(cls, cell_deg: float, bin_minutes: int) -> "Granularity":
        return cls(SpatialLevel.GRID, cell_deg, bin_minutes)

    def to_json(self) -> dict:
        return {"spatial": self.spatial.value, "cell_deg": self.cell_deg, "bin_minutes": self.bin_minutes}

    @classmethod
    def from_json(cls, obj: dict) -> "Granularity":
        return cls(SpatialLevel(obj["spatial"]), obj.get("cell_deg"), obj["bin_minutes"])


@dataclass(frozen=True, slots=True)
class CoarsenedVisit:
    """A dwell in one (cell, time bin) at the chosen granularity."""

    cell: object
    bin_start: int
    dwell_min: int

    def __post_init__(self) -> None:
        if self.dwell_min < 1:
            raise ValueError("dwell_min must be >= 1")


@dataclass
class ConsentRecord:
    purpose: Purpose
    granularity: Granularity | None
    issued_at: int
    revoked_at: int | None = None

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "purpose": self.purpose.value,
                "granularity": self.granularity.to_json() if self.granularity else None,
                "issued_at": self.issued_at,
                "revoked_at": self.revoked_at,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class SharePayload:
    """What actually leaves the device for one sharing decision."""

    purpose: Purpose
    pseudonym: bytes
    body: tuple

    def __post_init__(self) -> None:
        if len(self.pseudonym) != PSEUDONYM_BYTES:
            raise ValueError(f"pseudonym must be {PSEUDONYM_BYTES} bytes")


@dataclass(frozen=True)
class CellLabelMap:
    """Grid-cell → label lookup standing in for a real POI/municipality DB.

    Keyed at a fixed base grid resolution; unmapped cells fall back to a
    deterministic synthetic label so coarsening is total.
    """

    labels: Mapping[tuple[int, int], str]
    cell_deg: float = 0.1
    fallback_prefix: str = "area"

    def label_for(self, lat: float, lon: float) -> str:
        cell = grid_cell(lat, lon, self.cell_deg)
        got = self.labels.get(cell)
        if got is not None:
            return got
        return f"{self.fallback_prefix}:{cell[0]}:{cell[1]}"


def grid_cell(lat: float, lon: float, cell_deg: float) -> tuple[int, int]:
    return (math.floor(lat / cell_deg), math.floor(lon / cell_deg))


def coarsen(
    traj: Sequence[LocationPoint],
    g: Granularity,
    poi_map: CellLabelMap | None = None,
    muni_map: CellLabelMap | None = None,
) -> list[CoarsenedVisit]:
    """Reduce a time-sorted trajectory to visits at the requested granularity.

    Consecutive points falling in the same (cell, bin) merge into a single
    visit whose dwell is the ceiling of the merged time span in minutes
    (minimum one minute for a lone fix).
    """
    if g.spatial is SpatialLevel.POI and poi_map is None:
        raise MissingMap("POI granularity requires a poi_map")
    if g.spatial is SpatialLevel.MUNICIPALITY and muni_map is None:
        raise MissingMap("municipality granularity requires a muni_map")

    def cell_of(p: LocationPoint) -> object:
        if g.spatial is SpatialLevel.EXACT_POINT:
            return (p.lat, p.lon)
        if g.spatial is SpatialLevel.GRID:
            return grid_cell(p.lat, p.lon, g.cell_deg)
        if g.spatial is SpatialLevel.POI:
            return poi_map.label_for(p.lat, p.lon)
        return muni_map.label_for(p.lat, p.lon)

    bin_seconds = g.bin_minutes * 60
    visits: list[CoarsenedVisit] = []
    run_key: tuple | None = None
    run_start = run_end = 0
    for p in traj:
        key = (cell_of(p), (p.t // bin_seconds) * bin_seconds)
        if key == run_key:
            run_end = p.t
            continue
        if run_key is not None:
            visits.append(_close_run(run_key, run_start, run_end))
        run_key, run_start, run_end = key, p.t, p.t
    if run_key is not None:
        visits.append(_close_run(run_key, run_start, run_end))
    visits.sort(key=lambda v: v.bin_start)
    return visits


def _close_run(key: tuple, start: int, end: int) -> CoarsenedVisit:
    cell, bin_start = key
    dwell = max(1, math.ceil((end - start) / 60))
    return CoarsenedVisit(cell, bin_start, dwell)


def minimum_granularity(purpose: Purpose) -> Granularity | None:
    """Finest granularity the policy allows per purpose; None = no location."""
    if purpose is Purpose.CONTACT_UPLOAD:
        return None
    if purpose is Purpose.LOCATION_UPLOAD:
        return Granularity.grid(0.01, 60)
    return Granularity.grid(0.1, 1440)


class PersonalDataStore:
    """Exclusive per-citizen store of raw location history.

    ``retention_days`` is the owner's data-minimization choice: when set,
    points older than that horizon (relative to the newest point) are
    silently dropped on append.
    """

    def __init__(
        self,
        rng: random.Random | None = None,
        contact_store: ContactStore | None = None,
        retention_days: int | None = None,
    ) -> None:
        self._points: list[LocationPoint] = []
        self._consents: list[ConsentRecord] = []
        self._granted: set[Purpose] = set()
        self._stopped = False
        self._rng = rng
        self._retention_days = retention_days
        self.contact_store = contact_store

    def __len__(self) -> int:
        return len(self._points)

    # -- collection ---------------------------------------------------------

    def append_location(self, p: LocationPoint) -> None:
        if self._stopped:
            raise TrackingStopped("location collection has been stopped")
        if self._points and p.t < self._points[-1].t:
            insort(self._points, p, key=lambda q: q.t)
        else:
            self._points.append(p)
        if self._retention_days is not None:
            cutoff = self._points[-1].t - self._retention_days * 86400
            if self._points[0].t < cutoff:
                self._points = [q for q in self._points if q.t >= cutoff]

    def grant_consent(self, purpose: Purpose) -> None:
        self._granted.add(purpose)

    def has_consent(self, purpose: Purpose) -> bool:
        return purpose in self._granted

    def consent_ledger(self) -> list[ConsentRecord]:
        return list(self._consents)

    # -- sharing ------------------------------------------------------------

    def coarsened(
        self,
        g: Granularity,
        window: tuple[int, int] | None = None,
        poi_map: CellLabelMap | None = None,
        muni_map: CellLabelMap | None = None,
    ) -> list[CoarsenedVisit]:
        """Coarsen the stored history (optionally day-windowed) in place of
        handing out raw points."""
        traj = self._points
        if window is not None:
            lo, hi = window[0] * 86400, (window[1] + 1) * 86400
            traj = [p for p in traj if lo <= p.t < hi]
        return coarsen(traj, g, poi_map, muni_map)

    def build_share_payload(
        self,
        purpose: Purpose,
        g: Granularity | None,
        window: tuple[int, int],
        *,
        now: int = 0,
        poi_map: CellLabelMap | None = None,
        muni_map: CellLabelMap | None = None,
    ) -> tuple[SharePayload, ConsentRecord]:
        """Assemble one outgoing payload and its consent record.

        ``window`` is an inclusive (first_day, last_day) range.  The
        granularity must be no finer than the purpose's policy minimum on
        either axis; contact uploads carry no location and must pass
        ``g=None``.
        """
        if purpose not in self._granted:
            raise ConsentMissing(f"no active consent for {purpose.value}")
        minimum = minimum_granularity(purpose)
        if minimum is None:
            if g is not None:
                raise GranularityTooFine(f"{purpose.value} must not carry location data")
        else:
            if g is None or not g.at_least_as_coarse(minimum):
                raise GranularityTooFine(
                    f"{purpose.value} requires at least {minimum.spatial.value}"
                    f"/{minimum.bin_minutes}min"
                )

        if purpose is Purpose.CONTACT_UPLOAD:
            if self.contact_store is None:
                body: tuple = ()
            else:
                body = tuple(self.contact_store.qualifying_contact_digests(window))
        else:
            body = tuple(self.coarsened(g, window, poi_map, muni_map))

        pseudonym = self._rng.randbytes(PSEUDONYM_BYTES) if self._rng else secrets.token_bytes(PSEUDONYM_BYTES)
        consent = ConsentRecord(purpose, g, issued_at=now)
        self._consents.append(consent)
        return SharePayload(purpose, pseudonym, body), consent

    # -- the user's off switch ----------------------------------------------

    def stop_tracking_and_erase(self, scope: EraseScope, *, now: int = 0) -> None:
        self._stopped = True
        if scope is EraseScope.EVERYTHING:
            self._points.clear()
            if self.contact_store is not None:
                self.contact_store.prune(today=1 << 62)
            for c in self._consents:
                if c.revoked_at is None:
                    c.revoked_at = now
            self._granted.clear()

    # -- snapshotting ---------------------------------------------------------

    def save_snapshot(self, path: str | Path) -> None:
        lines = [SNAPSHOT_SCHEMA]
        lines += [f"{p.lat!r},{p.lon!r},{p.t}" for p in self._points]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load_snapshot(cls, path: str | Path, **kwargs) -> "PersonalDataStore":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != SNAPSHOT_SCHEMA:
            raise ValueError(f"unrecognized snapshot schema: {lines[:1]}")
        pds = cls(**kwargs)
        for line in lines[1:]:
            if not line.strip():
                continue
            lat, lon, t = line.split(",")
            pds.append_location(LocationPoint(float(lat), float(lon), int(t)))
        return pds

    def save_consent_ledger(self, path: str | Path) -> None:
        text = "\n".join(c.to_json_line() for c in self._consents)
        Path(path).write_text(text + ("\n" if self._consents else ""))
