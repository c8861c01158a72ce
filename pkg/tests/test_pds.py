"""Personal data store: collection, coarsening, policy, consent, erasure."""

import json
import math
import random

import pytest

from epitrace.contact_store import ContactStore, EncounterRecord
from epitrace.crypto_ids import DailySeed, expand_epoch_ids
from epitrace.pds import (
    CellLabelMap,
    ConsentMissing,
    EraseScope,
    Granularity,
    GranularityTooFine,
    LocationPoint,
    MissingMap,
    PersonalDataStore,
    Purpose,
    SpatialLevel,
    TrackingStopped,
    coarsen,
    grid_cell,
    minimum_granularity,
)


def make_pds(**kwargs):
    return PersonalDataStore(rng=random.Random(0), **kwargs)


class TestCollection:
    def test_append(self):
        pds = make_pds()
        pds.append_location(LocationPoint(43.7, 10.4, 100))
        assert len(pds) == 1

    def test_out_of_order_sorted(self):
        pds = make_pds()
        pds.append_location(LocationPoint(0.0, 0.0, 200))
        pds.append_location(LocationPoint(0.0, 0.0, 100))
        visits = pds.coarsened(Granularity.grid(0.01, 60))
        assert visits[0].bin_start <= visits[-1].bin_start
        assert pds._points[0].t == 100  # noqa: SLF001 - ordering is the contract

    def test_append_after_stop_rejected(self):
        pds = make_pds()
        pds.stop_tracking_and_erase(EraseScope.COLLECTION_ONLY)
        with pytest.raises(TrackingStopped):
            pds.append_location(LocationPoint(0.0, 0.0, 0))

    def test_coordinate_validation(self):
        with pytest.raises(ValueError):
            LocationPoint(91.0, 0.0, 0)
        with pytest.raises(ValueError):
            LocationPoint(0.0, -181.0, 0)

    def test_retention_drops_old_points(self):
        pds = PersonalDataStore(retention_days=1)
        pds.append_location(LocationPoint(0.0, 0.0, 0))
        pds.append_location(LocationPoint(0.0, 0.0, 3 * 86400))
        assert len(pds) == 1


class TestCoarsening:
    def test_grid_cell_example(self):
        assert grid_cell(43.7200, 10.4000, 0.01) == (4372, 1040)

    def test_temporal_floor(self):
        # 10:37 with 60-minute bins starts the 10:00 bin
        t = 10 * 3600 + 37 * 60
        visits = coarsen([LocationPoint(0.0, 0.0, t)], Granularity.grid(0.01, 60))
        assert visits[0].bin_start == 10 * 3600

    def test_run_of_points_merges(self):
        points = [LocationPoint(0.005, 0.005, 600 * k) for k in range(5)]
        visits = coarsen(points, Granularity.grid(0.01, 60))
        assert len(visits) == 1
        assert visits[0].cell == (0, 0)
        assert visits[0].dwell_min == 40  # spans 2400 s

    def test_merge_matches_brute_force(self):
        rng = random.Random(42)
        g = Granularity.grid(0.01, 15)
        bin_seconds = g.bin_minutes * 60
        for _ in range(50):
            t = 0
            points = []
            for _ in range(rng.randrange(1, 60)):
                t += rng.randrange(30, 1200)
                points.append(
                    LocationPoint(rng.uniform(0, 0.05), rng.uniform(0, 0.05), t)
                )
            visits = coarsen(points, g)
            # brute force: walk the list, cut a visit at every key change
            expected = []
            run = None
            for p in points:
                key = (grid_cell(p.lat, p.lon, 0.01), p.t // bin_seconds * bin_seconds)
                if run is not None and key == run[0]:
                    run[2] = p.t
                    continue
                if run is not None:
                    expected.append(run)
                run = [key, p.t, p.t]
            if run is not None:
                expected.append(run)
            expected = sorted(
                [(key[0], key[1], max(1, math.ceil((end - start) / 60))) for key, start, end in expected],
                key=lambda e: e[1],
            )
            got = [(v.cell, v.bin_start, v.dwell_min) for v in visits]
            assert sorted(got, key=lambda e: e[1]) == expected

    def test_single_fix_has_min_dwell(self):
        visits = coarsen([LocationPoint(0.0, 0.0, 50)], Granularity.grid(0.001, 1))
        assert visits[0].dwell_min == 1

    def test_poi_requires_map(self):
        with pytest.raises(MissingMap):
            coarsen([LocationPoint(0.0, 0.0, 0)], Granularity(SpatialLevel.POI, None, 60))

    def test_municipality_labels(self):
        muni = CellLabelMap({(0, 0): "pisa"}, cell_deg=0.1)
        g = Granularity(SpatialLevel.MUNICIPALITY, None, 1440)
        visits = coarsen([LocationPoint(0.05, 0.05, 0), LocationPoint(0.15, 0.05, 60)], g, muni_map=muni)
        cells = {v.cell for v in visits}
        assert "pisa" in cells
        assert any(c.startswith("area:") for c in cells if c != "pisa")

    def test_coarser_granularity_never_more_cells_or_visits(self):
        rng = random.Random(7)
        ladder = [
            Granularity.grid(0.001, 15),
            Granularity.grid(0.01, 60),
            Granularity.grid(0.1, 1440),
            Granularity(SpatialLevel.MUNICIPALITY, None, 1440),
        ]
        muni = CellLabelMap({}, cell_deg=0.1)  # synthetic labels: exactly the 0.1 grid
        for _ in range(25):
            t = 0
            points = []
            for _ in range(rng.randrange(2, 80)):
                t += rng.randrange(60, 3000)
                points.append(LocationPoint(rng.uniform(0, 0.4), rng.uniform(0, 0.4), t))
            stats = []
            for g in ladder:
                visits = coarsen(points, g, muni_map=muni)
                stats.append((len({v.cell for v in visits}), len(visits)))
            for (coarse_cells, coarse_visits), (fine_cells, fine_visits) in zip(stats[1:], stats):
                assert coarse_cells <= fine_cells
                assert coarse_visits <= fine_visits


class TestPolicyTable:
    def test_contact_upload_carries_no_location(self):
        assert minimum_granularity(Purpose.CONTACT_UPLOAD) is None

    def test_location_upload_minimum(self):
        g = minimum_granularity(Purpose.LOCATION_UPLOAD)
        assert g.spatial is SpatialLevel.GRID
        assert g.cell_deg == 0.01
        assert g.bin_minutes == 60

    def test_aggregate_minimum(self):
        g = minimum_granularity(Purpose.AGGREGATE_PARTICIPATION)
        assert g.cell_deg == 0.1
        assert g.bin_minutes == 1440

    def test_coarseness_order(self):
        ranks = [
            Granularity(SpatialLevel.EXACT_POINT, None, 60).spatial_rank,
            Granularity.grid(0.001, 60).spatial_rank,
            Granularity.grid(0.01, 60).spatial_rank,
            Granularity.grid(0.1, 60).spatial_rank,
            Granularity(SpatialLevel.POI, None, 60).spatial_rank,
            Granularity(SpatialLevel.MUNICIPALITY, None, 60).spatial_rank,
        ]
        assert ranks[0] < ranks[1] < ranks[2] < ranks[3] <= ranks[4] <= ranks[5]

    def test_granularity_validation(self):
        with pytest.raises(ValueError):
            Granularity.grid(0.05, 60)
        with pytest.raises(ValueError):
            Granularity.grid(0.01, 45)
        with pytest.raises(ValueError):
            Granularity(SpatialLevel.POI, 0.01, 60)


class TestSharePayloads:
    def test_too_fine_rejected(self):
        pds = make_pds()
        pds.grant_consent(Purpose.LOCATION_UPLOAD)
        with pytest.raises(GranularityTooFine):
            pds.build_share_payload(
                Purpose.LOCATION_UPLOAD, Granularity(SpatialLevel.EXACT_POINT, None, 60), (0, 1)
            )
        with pytest.raises(GranularityTooFine):
            pds.build_share_payload(Purpose.LOCATION_UPLOAD, Granularity.grid(0.001, 60), (0, 1))
        with pytest.raises(GranularityTooFine):
            pds.build_share_payload(Purpose.LOCATION_UPLOAD, Granularity.grid(0.01, 15), (0, 1))

    def test_contact_upload_must_not_carry_location(self):
        pds = make_pds()
        pds.grant_consent(Purpose.CONTACT_UPLOAD)
        with pytest.raises(GranularityTooFine):
            pds.build_share_payload(Purpose.CONTACT_UPLOAD, Granularity.grid(0.1, 1440), (0, 1))

    def test_consent_required(self):
        pds = make_pds()
        with pytest.raises(ConsentMissing):
            pds.build_share_payload(Purpose.LOCATION_UPLOAD, Granularity.grid(0.01, 60), (0, 1))

    def test_empty_window_still_consented_and_pseudonymous(self):
        pds = make_pds()
        pds.grant_consent(Purpose.LOCATION_UPLOAD)
        payload, consent = pds.build_share_payload(Purpose.LOCATION_UPLOAD, Granularity.grid(0.01, 60), (5, 6))
        assert payload.body == ()
        assert len(payload.pseudonym) == 16
        assert consent in pds.consent_ledger()

    def test_pseudonyms_fresh_across_builds(self):
        pds = make_pds()
        pds.grant_consent(Purpose.LOCATION_UPLOAD)
        seen = set()
        for _ in range(1000):
            payload, _ = pds.build_share_payload(Purpose.LOCATION_UPLOAD, Granularity.grid(0.01, 60), (0, 0))
            seen.add(payload.pseudonym)
        assert len(seen) == 1000

    def test_window_restricts_body(self):
        pds = make_pds()
        pds.grant_consent(Purpose.LOCATION_UPLOAD)
        pds.append_location(LocationPoint(0.005, 0.005, 10))  # day 0
        pds.append_location(LocationPoint(0.005, 0.005, 3 * 86400 + 10))  # day 3
        payload, _ = pds.build_share_payload(Purpose.LOCATION_UPLOAD, Granularity.grid(0.01, 60), (0, 1))
        assert len(payload.body) == 1
        assert payload.body[0].bin_start < 86400

    def test_contact_upload_body_is_digests(self):
        store = ContactStore()
        sched = expand_epoch_ids(DailySeed(0, b"\x11" * 32))
        store.record_encounter(EncounterRecord(sched.ids[4].bytes, 0, 4, 15, 30))
        pds = make_pds(contact_store=store)
        pds.grant_consent(Purpose.CONTACT_UPLOAD)
        payload, _ = pds.build_share_payload(Purpose.CONTACT_UPLOAD, None, (0, 0))
        assert len(payload.body) == 1
        assert isinstance(payload.body[0], str) and len(payload.body[0]) == 64

    def test_every_payload_has_exactly_one_consent(self):
        pds = make_pds()
        pds.grant_consent(Purpose.LOCATION_UPLOAD)
        pds.grant_consent(Purpose.CONTACT_UPLOAD)
        built = []
        for k in range(20):
            purpose = Purpose.LOCATION_UPLOAD if k % 2 else Purpose.CONTACT_UPLOAD
            g = Granularity.grid(0.01, 60) if purpose is Purpose.LOCATION_UPLOAD else None
            built.append(pds.build_share_payload(purpose, g, (0, 0), now=k))
        ledger = pds.consent_ledger()
        assert len(ledger) == len(built)
        for (payload, consent), entry in zip(built, ledger):
            assert consent is entry
            assert consent.purpose is payload.purpose


class TestErasure:
    def test_everything_clears_history(self):
        store = ContactStore([EncounterRecord(b"\x01" * 16, 0, 0, 15, 30)])
        pds = make_pds(contact_store=store)
        pds.grant_consent(Purpose.LOCATION_UPLOAD)
        pds.append_location(LocationPoint(0.0, 0.0, 0))
        pds.build_share_payload(Purpose.LOCATION_UPLOAD, Granularity.grid(0.01, 60), (0, 0), now=5)
        pds.stop_tracking_and_erase(EraseScope.EVERYTHING, now=9)
        assert len(pds) == 0
        assert len(store) == 0
        assert all(c.revoked_at == 9 for c in pds.consent_ledger())

    def test_collection_only_keeps_history(self):
        pds = make_pds()
        pds.append_location(LocationPoint(0.0, 0.0, 0))
        pds.stop_tracking_and_erase(EraseScope.COLLECTION_ONLY)
        assert len(pds) == 1
        with pytest.raises(TrackingStopped):
            pds.append_location(LocationPoint(0.0, 0.0, 1))


class TestNonLinkability:
    def test_pseudonyms_and_bodies_disjoint_from_ephids(self):
        rng = random.Random(3)
        broadcast = set()
        for _ in range(50):
            sched = expand_epoch_ids(DailySeed(0, rng.randbytes(32)))
            broadcast.update(e.bytes for e in sched.ids)
        pds = make_pds()
        pds.grant_consent(Purpose.LOCATION_UPLOAD)
        for k in range(200):
            pds.append_location(LocationPoint(rng.uniform(0, 0.1), rng.uniform(0, 0.1), k * 600))
        pseudonyms = set()
        for _ in range(50):
            payload, _ = pds.build_share_payload(Purpose.LOCATION_UPLOAD, Granularity.grid(0.01, 60), (0, 2))
            pseudonyms.add(payload.pseudonym)
            blob = json.dumps(
                [[list(v.cell), v.bin_start, v.dwell_min] for v in payload.body]
            ).encode()
            for eph in broadcast:
                assert eph not in blob
        assert pseudonyms.isdisjoint(broadcast)


class TestSnapshots:
    def test_snapshot_round_trip(self, tmp_path):
        pds = make_pds()
        rng = random.Random(4)
        for k in range(30):
            pds.append_location(LocationPoint(rng.uniform(-1, 1), rng.uniform(-1, 1), k * 100))
        path = tmp_path / "pds.snapshot"
        pds.save_snapshot(path)
        assert path.read_text().splitlines()[0] == "epitrace-pds v1"
        loaded = PersonalDataStore.load_snapshot(path)
        assert len(loaded) == 30
        assert loaded.coarsened(Granularity.grid(0.01, 60)) == pds.coarsened(Granularity.grid(0.01, 60))

    def test_consent_ledger_json_lines(self, tmp_path):
        pds = make_pds()
        pds.grant_consent(Purpose.LOCATION_UPLOAD)
        pds.build_share_payload(Purpose.LOCATION_UPLOAD, Granularity.grid(0.01, 60), (0, 0), now=3)
        pds.stop_tracking_and_erase(EraseScope.EVERYTHING, now=8)
        path = tmp_path / "consents.jsonl"
        pds.save_consent_ledger(path)
        lines = [json.loads(line) for line in path.read_text().splitlines()]
        assert lines == [
            {
                "purpose": "location_upload",
                "granularity": {"spatial": "grid", "cell_deg": 0.01, "bin_minutes": 60},
                "issued_at": 3,
                "revoked_at": 8,
            }
        ]


def test_raw_points_never_leave_the_module():
    """Grep-level audit: no other source module touches raw point storage."""
    from pathlib import Path

    src = Path(__file__).resolve().parents[1] / "src" / "epitrace"
    for path in src.glob("*.py"):
        if path.name == "pds.py":
            continue
        text = path.read_text()
        assert "_points" not in text, f"{path.name} reaches into raw location storage"
