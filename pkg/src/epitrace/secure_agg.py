"""Additively masked count aggregation: the aggregator learns only the sum.

Every unordered participant pair (i, j) shares a 32-byte seed distributed
out of band.  Both expand it to the same mask vector; i adds it, j
subtracts it, so the pairwise terms cancel in the sum and each individual
share is uniformly masked mod 2^32.  Exactness holds because per-entry
contributions are bounded below 2^16 and participant counts below 2^16,
so the true sum never wraps.

Honest-but-curious model only: no dropout recovery, no malicious-party
defenses.  A missing or malformed share aborts the round.
"""

from __future__ import annotations

import hashlib
from bisect import bisect_right
from dataclasses import dataclass
from functools import cached_property
from typing import Hashable, Iterable, Sequence

MASK_MODULUS = 1 << 32
ENTRY_BOUND = 1 << 16  # per-participant per-entry sanity bound

_MASK_DOMAIN = b"MASK"

Cell = Hashable


class MissingSeed(ValueError):
    """A participant lacks a pairwise seed for one of its peers."""


class WrongShareCount(ValueError):
    """Aggregation saw a different participant set than announced."""


class DimensionMismatch(ValueError):
    """A share's vector length does not match the round dimension."""


@dataclass(frozen=True)
class CellIndexSpace:
    """Fixed coordinate system for one aggregation round.

    ``cells`` and ``bins`` are ordered and duplicate-free; the flat vector
    index of (cell c_i, bin b_j) is ``i * len(bins) + j``.  ``bin_seconds``
    is the width of each temporal bin, so a visit timestamp buckets into
    the bin b with b <= t < b + bin_seconds.
    """

    cells: tuple[Cell, ...]
    bins: tuple[int, ...]
    bin_seconds: int = 3600

    def __post_init__(self) -> None:
        if len(set(self.cells)) != len(self.cells):
            raise ValueError("duplicate cells in index space")
        if len(set(self.bins)) != len(self.bins):
            raise ValueError("duplicate bins in index space")
        if list(self.bins) != sorted(self.bins):
            raise ValueError("bins must be sorted ascending")
        if self.bin_seconds <= 0:
            raise ValueError("bin_seconds must be positive")

    @property
    def dimension(self) -> int:
        return len(self.cells) * len(self.bins)

    @cached_property
    def _cell_index(self) -> dict[Cell, int]:
        return {c: i for i, c in enumerate(self.cells)}

    def bin_index(self, t: int) -> int | None:
        """Index of the bin containing timestamp t, or None if uncovered."""
        i = bisect_right(self.bins, t) - 1
        if i < 0 or t >= self.bins[i] + self.bin_seconds:
            return None
        return i

    def index_of(self, cell: Cell, t: int) -> int | None:
        ci = self._cell_index.get(cell)
        if ci is None:
            return None
        bi = self.bin_index(t)
        if bi is None:
            return None
        return ci * len(self.bins) + bi

    def coordinate(self, flat_index: int) -> tuple[Cell, int]:
        ci, bi = divmod(flat_index, len(self.bins))
        return self.cells[ci], self.bins[bi]


@dataclass(frozen=True)
class ContributionVector:
    """One participant's plaintext visit counts over a CellIndexSpace."""

    space: CellIndexSpace
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.counts) != self.space.dimension:
            raise ValueError(f"expected {self.space.dimension} counts, got {len(self.counts)}")
        for c in self.counts:
            if not 0 <= c < ENTRY_BOUND:
                raise ValueError(f"count {c} outside [0, {ENTRY_BOUND})")

    @classmethod
    def from_visits(cls, space: CellIndexSpace, visits: Iterable[tuple[Cell, int]]) -> "ContributionVector":
        """Count (cell, timestamp) pairs; pairs outside the space are dropped."""
        counts = [0] * space.dimension
        for cell, t in visits:
            idx = space.index_of(cell, t)
            if idx is not None:
                counts[idx] += 1
        return cls(space, tuple(counts))


@dataclass(frozen=True)
class PairwiseSeed:
    """Shared mask seed for the unordered participant pair (i, j), i < j."""

    i: int
    j: int
    secret: bytes

    def __post_init__(self) -> None:
        if not 0 <= self.i < self.j:
            raise ValueError(f"need 0 <= i < j, got ({self.i}, {self.j})")
        if len(self.secret) != 32:
            raise ValueError("pairwise secret must be 32 bytes")


@dataclass(frozen=True)
class MaskedShare:
    """One participant's masked vector, safe to reveal to the aggregator."""

    participant: int
    values: tuple[int, ...]

    def to_bytes(self) -> bytes:
        """Wire encoding: participant u32 BE, D u32 BE, then D u32 BE words."""
        head = self.participant.to_bytes(4, "big") + len(self.values).to_bytes(4, "big")
        return head + b"".join(v.to_bytes(4, "big") for v in self.values)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MaskedShare":
        if len(data) < 8:
            raise ValueError("truncated share header")
        participant = int.from_bytes(data[:4], "big")
        d = int.from_bytes(data[4:8], "big")
        body = data[8:]
        if len(body) != 4 * d:
            raise ValueError(f"expected {4 * d} value bytes, got {len(body)}")
        values = tuple(int.from_bytes(body[4 * k : 4 * k + 4], "big") for k in range(d))
        return cls(participant, values)


def pairwise_mask(seed: PairwiseSeed | bytes, dimension: int) -> list[int]:
    """Expand a pairwise seed into a deterministic mask vector mod 2^32.

    Entry k is the first 4 bytes (big-endian) of
    SHA-256(secret || "MASK" || k as u32 BE).
    """
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    secret = seed.secret if isinstance(seed, PairwiseSeed) else seed
    prefix = secret + _MASK_DOMAIN
    sha256 = hashlib.sha256
    out = []
    for k in range(dimension):
        digest = sha256(prefix + k.to_bytes(4, "big")).digest()
        out.append(int.from_bytes(digest[:4], "big"))
    return out


def mask_contribution(
    v: ContributionVector,
    me: int,
    seeds: Iterable[PairwiseSeed],
    n: int,
) -> MaskedShare:
    """Mask one contribution with all n-1 pairwise masks involving ``me``.

    Masks for pairs where ``me`` is the lower index are added; where it is
    the higher index they are subtracted, so they cancel across the cohort.
    """
    by_peer: dict[int, PairwiseSeed] = {}
    for s in seeds:
        if s.i == me:
            by_peer[s.j] = s
        elif s.j == me:
            by_peer[s.i] = s
    missing = [j for j in range(n) if j != me and j not in by_peer]
    if missing:
        raise MissingSeed(f"participant {me} lacks seeds for peers {missing}")

    values = [c % MASK_MODULUS for c in v.counts]
    d = len(values)
    for peer, seed in sorted(by_peer.items()):
        mask = pairwise_mask(seed, d)
        if me < peer:
            for k in range(d):
                values[k] = (values[k] + mask[k]) % MASK_MODULUS
        else:
            for k in range(d):
                values[k] = (values[k] - mask[k]) % MASK_MODULUS
    return MaskedShare(me, tuple(values))


def aggregate(shares: Sequence[MaskedShare], n: int, dimension: int) -> list[int]:
    """Sum all shares mod 2^32; pairwise masks cancel, leaving exact sums.

    Aborts (raises) without emitting anything partial when the share set
    is not exactly the announced cohort.
    """
    if len(shares) != n:
        raise WrongShareCount(f"expected {n} shares, got {len(shares)}")
    participants = {s.participant for s in shares}
    if len(participants) != n:
        raise WrongShareCount("duplicate participant indices in share set")
    for s in shares:
        if len(s.values) != dimension:
            raise DimensionMismatch(
                f"participant {s.participant} sent dimension {len(s.values)}, expected {dimension}"
            )
    totals = [0] * dimension
    for s in shares:
        for k, val in enumerate(s.values):
            totals[k] = (totals[k] + val) % MASK_MODULUS
    return totals


def make_pairwise_seeds(n: int, rng) -> list[PairwiseSeed]:
    """Trusted-setup helper: one fresh seed per unordered pair.

    ``rng`` needs a ``randbytes`` method; pass a seeded random.Random for
    reproducible rounds or secrets.SystemRandom-alike for live ones.
    """
    return [PairwiseSeed(i, j, rng.randbytes(32)) for i in range(n) for j in range(i + 1, n)]


def seeds_for(me: int, seeds: Iterable[PairwiseSeed]) -> list[PairwiseSeed]:
    """The subset of a seed pool involving one participant."""
    return [s for s in seeds if me in (s.i, s.j)]
