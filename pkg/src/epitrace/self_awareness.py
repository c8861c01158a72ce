"""Citizen-side analytics over the public risk map and the private history.

Everything here is a pure function of (private visits, published RiskMap)
and returns plain local values; nothing is transmitted anywhere.  This is
the "merge global with local" direction: the authority never sees the
trajectory, the citizen sees exactly where their own routine intersects
published risk.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from typing import Sequence

from .authority import RiskMap
from .pds import CoarsenedVisit

ROUTINE_MIN_DAYS = 3  # distinct days before a cell counts as routine
RISK_WEIGHT = 10  # route-cost penalty per risk level per step


class SpaceMismatch(ValueError):
    """A visit lies outside the risk map's coordinate space."""


class InsufficientHistory(ValueError):
    """Not enough distinct days of history to call anything a routine."""


class Unreachable(RuntimeError):
    """No path between the requested cells (defensive; a full rectangular
    lattice is always connected)."""


@dataclass(frozen=True)
class ExposureScore:
    total: float
    per_visit: tuple[tuple[CoarsenedVisit, float], ...]


@dataclass(frozen=True)
class RoutineSegment:
    cell: object
    bins: tuple[int, ...]
    days: int
    visit_count: int
    risk_level: int


def exposure_score(visits: Sequence[CoarsenedVisit], risk: RiskMap) -> ExposureScore:
    """Dwell-weighted sum of risk levels over the user's own visits."""
    per_visit = []
    total = 0.0
    for v in visits:
        idx = risk.space.index_of(v.cell, v.bin_start)
        if idx is None:
            raise SpaceMismatch(f"visit at {v.cell!r}/{v.bin_start} is outside the risk map space")
        contribution = float(v.dwell_min * risk.levels[idx])
        per_visit.append((v, contribution))
        total += contribution
    return ExposureScore(total, tuple(per_visit))


def flag_risky_segments(
    history: Sequence[CoarsenedVisit],
    risk: RiskMap,
    *,
    min_days: int = ROUTINE_MIN_DAYS,
) -> list[RoutineSegment]:
    """Routine cells (visited on enough distinct days) whose risk is 2+.

    Visits outside the map's space count toward the routine but carry
    level 0, so they can never flag on their own.  Results are sorted by
    risk level, then visit frequency, descending.
    """
    days_seen = {v.bin_start // 86400 for v in history}
    if len(days_seen) < min_days:
        raise InsufficientHistory(f"history spans {len(days_seen)} days, need {min_days}")

    by_cell: dict[object, list[CoarsenedVisit]] = {}
    for v in history:
        by_cell.setdefault(v.cell, []).append(v)

    flagged = []
    for cell, visits in by_cell.items():
        cell_days = {v.bin_start // 86400 for v in visits}
        if len(cell_days) < min_days:
            continue
        level = max(risk.level_at(cell, v.bin_start) for v in visits)
        if level < 2:
            continue
        bins = tuple(sorted({v.bin_start for v in visits}))
        flagged.append(RoutineSegment(cell, bins, len(cell_days), len(visits), level))
    flagged.sort(key=lambda s: (-s.risk_level, -s.visit_count, str(s.cell)))
    return flagged


def safer_route(
    width: int,
    height: int,
    origin: tuple[int, int],
    dest: tuple[int, int],
    risk: RiskMap,
    bin_start: int,
    *,
    risk_weight: float = RISK_WEIGHT,
) -> list[tuple[int, int]]:
    """Minimum-cost path on the 4-neighbor lattice, trading distance for risk.

    Stepping into a cell costs 1 + risk_weight * level(cell, bin).  Among
    minimum-cost paths the one with fewest hops wins, and among those the
    lexicographically smallest cell sequence.  Cells absent from the risk
    map's space count as level 0.
    """
    for name, (x, y) in (("origin", origin), ("dest", dest)):
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"{name} {x, y} outside the {width}x{height} grid")
    if origin == dest:
        return [origin]

    def step_cost(cell: tuple[int, int]) -> float:
        return 1.0 + risk_weight * risk.level_at(cell, bin_start)

    def neighbors(cell: tuple[int, int]):
        x, y = cell
        for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
            if 0 <= nx < width and 0 <= ny < height:
                yield (nx, ny)

    # Backward pass: optimal (cost, hops) from every cell to dest, so the
    # forward walk can pick the lexicographically smallest optimal step.
    INF = (float("inf"), float("inf"))
    best: dict[tuple[int, int], tuple[float, int]] = {dest: (0.0, 0)}
    heap: list[tuple[float, int, tuple[int, int]]] = [(0.0, 0, dest)]
    while heap:
        cost, hops, cell = heapq.heappop(heap)
        if (cost, hops) > best.get(cell, INF):
            continue
        entry = step_cost(cell)  # edge u->cell is paid on entering `cell`
        for u in neighbors(cell):
            cand = (cost + entry, hops + 1)
            if cand < best.get(u, INF):
                best[u] = cand
                heapq.heappush(heap, (cand[0], cand[1], u))

    if origin not in best:
        raise Unreachable(f"no path from {origin} to {dest}")

    path = [origin]
    cur = origin
    while cur != dest:
        cost, hops = best[cur]
        chosen = None
        for n in sorted(neighbors(cur)):
            n_cost, n_hops = best.get(n, INF)
            if (n_cost + step_cost(n), n_hops + 1) == (cost, hops):
                chosen = n
                break
        if chosen is None:  # cannot happen on a connected lattice
            raise Unreachable(f"optimal successor missing at {cur}")
        path.append(chosen)
        cur = chosen
    return path


def route_cost(path: Sequence[tuple[int, int]], risk: RiskMap, bin_start: int, *, risk_weight: float = RISK_WEIGHT) -> float:
    """Total cost of a path under the safer_route edge model."""
    return sum(1.0 + risk_weight * risk.level_at(cell, bin_start) for cell in path[1:])


def route_to_csv(path: Sequence[tuple[int, int]]) -> str:
    """Ordered cell list as CSV rows: step,cell_x,cell_y."""
    lines = ["step,cell_x,cell_y"]
    lines += [f"{i},{x},{y}" for i, (x, y) in enumerate(path)]
    return "\n".join(lines) + "\n"


def score_to_json(score: ExposureScore) -> str:
    return json.dumps(
        {
            "total": score.total,
            "visits": [
                {
                    "cell": list(v.cell) if isinstance(v.cell, tuple) else v.cell,
                    "bin_start": v.bin_start,
                    "dwell_min": v.dwell_min,
                    "contribution": c,
                }
                for v, c in score.per_visit
            ],
        },
        indent=2,
        sort_keys=True,
    )


def segments_to_json(segments: Sequence[RoutineSegment]) -> str:
    return json.dumps(
        [
            {
                "cell": list(s.cell) if isinstance(s.cell, tuple) else s.cell,
                "bins": list(s.bins),
                "days": s.days,
                "visit_count": s.visit_count,
                "risk_level": s.risk_level,
            }
            for s in segments
        ],
        indent=2,
        sort_keys=True,
    )
