"""Trusted-authority backend.

Two deliberately separate stores live here.  The exposure board holds only
seed material for the contact channel; the location store holds only
coarsened visit counts keyed by pseudonymous payloads.  They share no
identifier values, which is what keeps the two channels mutually
unlinkable.  On top of the location store sit the analytics: density
maps with small-count suppression, hotspot detection, and a published
risk map.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .contact_store import RETENTION_DAYS
from .crypto_ids import EscrowTable, ExposureReport, report_id_set
from .pds import Purpose, SharePayload
from .secure_agg import Cell, CellIndexSpace

K_ANON = 5  # published counts below this are suppressed to zero
RATIO_MIN = 0.05  # minimum infected/baseline ratio for a hotspot


class WrongPurpose(ValueError):
    """Payload submitted to an endpoint for a different purpose."""


@dataclass(frozen=True)
class BoardEntry:
    report: ExposureReport
    published_day: int


class PublicBoard:
    """Append-only exposure-report board with a retention horizon."""

    def __init__(self) -> None:
        self._entries: list[BoardEntry] = []

    def __len__(self) -> int:
        return len(self._entries)

    def publish_report(self, report: ExposureReport, published_day: int) -> None:
        self._entries.append(BoardEntry(report, published_day))

    def prune(self, today: int, retention_days: int = RETENTION_DAYS) -> None:
        cutoff = today - retention_days
        self._entries = [e for e in self._entries if e.published_day > cutoff]

    def reports(self) -> list[ExposureReport]:
        return [e.report for e in self._entries]

    def identifier_set(self) -> set[bytes]:
        """Every byte-string identifier observable on the contact channel:
        published seeds plus all IDs derivable from them."""
        out: set[bytes] = set()
        for e in self._entries:
            out.update(e.report.seeds)
            out.update(report_id_set(e.report))
        return out


def resolve_and_notify(escrow: EscrowTable, contact_digests: Iterable[str]) -> set[str]:
    """Centralized variant: map uploaded ID digests to registrants.

    Each registrant appears at most once no matter how many of their IDs
    were submitted.
    """
    notified: set[str] = set()
    for digest in contact_digests:
        registrant = escrow.resolve_digest(digest)
        if registrant is not None:
            notified.add(registrant)
    return notified


class LocationStore:
    """Accumulates coarsened visits from confirmed-positive uploads.

    Counts are keyed by (cell, exact bin_start).  A payload's pseudonym is
    kept only long enough to deduplicate resubmissions within the current
    upload window; ``close_upload_window`` discards them all.
    """

    def __init__(self) -> None:
        self._infected: dict[tuple[Cell, int], int] = {}
        self._baseline: dict[tuple[Cell, int], int] = {}
        self._window_pseudonyms: set[bytes] = set()

    def ingest_location_payload(self, payload: SharePayload) -> None:
        if payload.purpose is not Purpose.LOCATION_UPLOAD:
            raise WrongPurpose(f"expected location_upload, got {payload.purpose.value}")
        if payload.pseudonym in self._window_pseudonyms:
            return
        self._window_pseudonyms.add(payload.pseudonym)
        for visit in payload.body:
            key = (visit.cell, visit.bin_start)
            self._infected[key] = self._infected.get(key, 0) + 1

    def ingest_aggregate(self, space: CellIndexSpace, sums: Sequence[int], *, baseline: bool = False) -> None:
        """Fold in a secure-aggregation result (one count vector per round)."""
        if len(sums) != space.dimension:
            raise ValueError(f"aggregate dimension {len(sums)} != space dimension {space.dimension}")
        target = self._baseline if baseline else self._infected
        for idx, value in enumerate(sums):
            if value:
                key = space.coordinate(idx)
                target[key] = target.get(key, 0) + value

    def close_upload_window(self) -> None:
        self._window_pseudonyms.clear()

    def infected_count_at(self, cell: Cell, bin_start: int) -> int:
        return self._infected.get((cell, bin_start), 0)

    def observed_bins(self) -> list[int]:
        return sorted({b for (_c, b) in self._infected})

    def _bucket(self, counts: dict[tuple[Cell, int], int], space: CellIndexSpace) -> list[int]:
        out = [0] * space.dimension
        for (cell, bin_start), n in counts.items():
            idx = space.index_of(cell, bin_start)
            if idx is not None:
                out[idx] += n
        return out

    def build_density_map(self, space: CellIndexSpace, *, with_baseline: bool = False) -> "DensityMap":
        infected = self._bucket(self._infected, space)
        total = self._bucket(self._baseline, space) if with_baseline else None
        if total is not None:
            # the baseline covers the whole population, so it can never be
            # smaller than the positive-only counts it contains
            total = [max(t, i) for t, i in zip(total, infected)]
        return DensityMap(space, tuple(infected), tuple(total) if total is not None else None)


@dataclass(frozen=True)
class DensityMap:
    """Spatio-temporal visit counts by confirmed positives.

    ``infected_counts`` holds the true internal values; anything published
    goes through ``published_counts`` which suppresses entries below the
    anonymity threshold.
    """

    space: CellIndexSpace
    infected_counts: tuple[int, ...]
    total_counts: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.infected_counts) != self.space.dimension:
            raise ValueError("infected_counts dimension mismatch")
        if self.total_counts is not None:
            if len(self.total_counts) != self.space.dimension:
                raise ValueError("total_counts dimension mismatch")
            for inf, tot in zip(self.infected_counts, self.total_counts):
                if inf > tot:
                    raise ValueError("infected count exceeds baseline")

    def published_counts(self, k_anon: int = K_ANON) -> list[int]:
        return [c if c >= k_anon else 0 for c in self.infected_counts]


@dataclass(frozen=True)
class Hotspot:
    cell: Cell
    bin_start: int
    infected_count: int
    ratio: float  # infected/baseline; math.inf when no usable baseline


@dataclass(frozen=True)
class RiskMap:
    """Published per-(cell, bin) risk levels 0..3."""

    space: CellIndexSpace
    levels: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.levels) != self.space.dimension:
            raise ValueError("levels dimension mismatch")

    def level_at(self, cell: Cell, t: int, default: int = 0) -> int:
        idx = self.space.index_of(cell, t)
        return self.levels[idx] if idx is not None else default


def detect_hotspots(dmap: DensityMap, *, k_anon: int = K_ANON, ratio_min: float = RATIO_MIN) -> list[Hotspot]:
    """Cells×bins with at least k_anon positive visits and, when a baseline
    exists, an infected share of at least ratio_min.

    Sorted by infected count descending, then (cell, bin) ascending, so
    repeated calls give an identical total order.
    """
    found: list[Hotspot] = []
    for idx, count in enumerate(dmap.infected_counts):
        if count < k_anon:
            continue
        cell, bin_start = dmap.space.coordinate(idx)
        if dmap.total_counts is None:
            found.append(Hotspot(cell, bin_start, count, math.inf))
            continue
        baseline = dmap.total_counts[idx]
        if baseline == 0:
            found.append(Hotspot(cell, bin_start, count, math.inf))
        elif count / baseline >= ratio_min:
            found.append(Hotspot(cell, bin_start, count, count / baseline))
    found.sort(key=lambda h: (-h.infected_count, _sort_key(h.cell), h.bin_start))
    return found


def _sort_key(cell: Cell):
    # cells within one space are homogeneous; stringify mixed exotic ids
    return cell if isinstance(cell, (tuple, str, int)) else str(cell)


def publish_risk_map(dmap: DensityMap, hotspots: Sequence[Hotspot], *, k_anon: int = K_ANON) -> RiskMap:
    """Level 3 for hotspots; 2 and 1 for the top and middle terciles of the
    remaining nonzero *published* counts; 0 elsewhere.

    Only suppressed counts feed the tercile levels, so no small-count cell
    can rise above level 0 unless it independently qualified as a hotspot.
    """
    published = dmap.published_counts(k_anon)
    hot = {(h.cell, h.bin_start) for h in hotspots}
    hot_idx = {i for i in range(dmap.space.dimension) if dmap.space.coordinate(i) in hot}

    nonzero = sorted(published[i] for i in range(len(published)) if published[i] > 0 and i not in hot_idx)
    levels = [0] * dmap.space.dimension
    for i in hot_idx:
        levels[i] = 3
    if nonzero:
        m = len(nonzero)
        upper = nonzero[(2 * m) // 3] if (2 * m) // 3 < m else nonzero[-1]
        lower = nonzero[m // 3]
        for i, count in enumerate(published):
            if i in hot_idx or count == 0:
                continue
            if count >= upper:
                levels[i] = 2
            elif count >= lower:
                levels[i] = 1
    return RiskMap(dmap.space, tuple(levels))


# -- export formats ----------------------------------------------------------


def export_density_csv(dmap: DensityMap, path: str | Path, *, k_anon: int = K_ANON) -> None:
    """Published (suppressed) view only; grid cells as x,y columns."""
    published = dmap.published_counts(k_anon)
    lines = ["cell_x,cell_y,bin_start,count"]
    for idx, count in enumerate(published):
        cell, bin_start = dmap.space.coordinate(idx)
        x, y = _cell_xy(cell)
        lines.append(f"{x},{y},{bin_start},{count}")
    Path(path).write_text("\n".join(lines) + "\n")


def export_risk_csv(rmap: RiskMap, path: str | Path) -> None:
    lines = ["cell_x,cell_y,bin_start,level"]
    for idx, level in enumerate(rmap.levels):
        cell, bin_start = rmap.space.coordinate(idx)
        x, y = _cell_xy(cell)
        lines.append(f"{x},{y},{bin_start},{level}")
    Path(path).write_text("\n".join(lines) + "\n")


def hotspots_to_json(hotspots: Sequence[Hotspot]) -> str:
    rows = []
    for h in hotspots:
        rows.append(
            {
                "cell": list(h.cell) if isinstance(h.cell, tuple) else h.cell,
                "bin_start": h.bin_start,
                "infected_count": h.infected_count,
                "ratio": None if math.isinf(h.ratio) else h.ratio,
            }
        )
    return json.dumps(rows, indent=2, sort_keys=True)


def export_hotspots_json(hotspots: Sequence[Hotspot], path: str | Path) -> None:
    Path(path).write_text(hotspots_to_json(hotspots) + "\n")


def _cell_xy(cell: Cell) -> tuple:
    if isinstance(cell, tuple) and len(cell) == 2:
        return cell
    return (cell, "")
