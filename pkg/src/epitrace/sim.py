"""Deterministic agent-based epidemic simulator on a grid world.

Agents follow a home→work→home routine with one shared-space errand per
day.  Infection spreads through two channels: direct co-location contact
and surface contamination deposited in shared spaces.  The tracing
machinery under test runs inside the loop: app carriers broadcast rotating
ephemeral IDs, log encounters, and on a positive test publish an exposure
report (and, in location mode, upload a coarsened visit history), after
which matching contacts quarantine.

Everything random flows from one seeded generator in a fixed iteration
order (agents by ascending id, cells row-major, shared cells in config
order), so a (config, seed) pair reproduces bit-identical runs.  Pseudonym
randomness is forked into per-agent generators at setup and never touches
the world stream.

Simplifications, by design: quarantine compliance is perfect (a Q agent
neither transmits nor acquires), testing is deterministic after the
configured delay and fires only while the agent is still infectious, and
notified agents are quarantined the moment a matching report is
published.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import asdict, dataclass, replace
from enum import Enum
from itertools import product
from pathlib import Path
from typing import Sequence

from .authority import LocationStore, PublicBoard, detect_hotspots, export_hotspots_json
from .contact_store import ContactStore, EncounterRecord
from .crypto_ids import DailySeed, derive_epoch_id, derive_next_seed, report_from_seeds, report_id_set
from .pds import Granularity, LocationPoint, PersonalDataStore, Purpose
from .secure_agg import CellIndexSpace

SECONDS_PER_EPOCH = 900
EPOCHS_PER_DAY = 96
WORK_START, WORK_END = 36, 68  # 09:00-17:00
ERRAND_START, ERRAND_END = 68, 92  # 17:00-23:00
QUARANTINE_DAYS = 14
REPORT_WINDOW_DAYS = 14
ENCOUNTER_DURATION_MIN = 15
ENCOUNTER_ATTENUATION = 30
WORLD_CELL_DEG = 0.01  # one world cell = one Grid(0.01) cell
PDS_SAMPLE_EVERY = 4  # one location fix per hour
PDS_RETENTION_DAYS = 15
STORE_PRUNE_EVERY_DAYS = 7


class ConfigError(ValueError):
    """Scenario validation failure; carries the offending field name."""

    def __init__(self, field_name: str, message: str) -> None:
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class Intervention(Enum):
    NONE = "none"
    CONTACT_TRACING = "contact"
    CONTACT_AND_LOCATION = "contact+location"

    @property
    def traces_contacts(self) -> bool:
        return self is not Intervention.NONE

    @property
    def uploads_location(self) -> bool:
        return self is Intervention.CONTACT_AND_LOCATION


@dataclass(frozen=True)
class ScenarioConfig:
    n_agents: int = 500
    width: int = 20
    height: int = 20
    adoption: float = 0.6
    beta_contact: float = 0.012
    beta_fomite: float = 0.0
    deposit_rate: float = 1.0
    decay_half_life_days: float = 0.5
    e_mean_days: float = 3.0
    i_mean_days: float = 5.0
    test_delay_days: float = 2.0
    intervention: Intervention = Intervention.NONE
    shared_space_cells: tuple[tuple[int, int], ...] = ()
    seed: int = 0
    horizon_days: int = 120
    n_index_cases: int = 5
    n_workplaces: int = 160  # 0 = everyone works from home
    errand_mode: str = "random"  # or "staggered": capacity-spread slots

    def validate(self) -> None:
        if self.n_agents < 1:
            raise ConfigError("n_agents", "must be >= 1")
        if self.width < 1:
            raise ConfigError("width", "must be >= 1")
        if self.height < 1:
            raise ConfigError("height", "must be >= 1")
        if not 0.0 <= self.adoption <= 1.0:
            raise ConfigError("adoption", f"{self.adoption} outside [0, 1]")
        if not 0.0 <= self.beta_contact <= 1.0:
            raise ConfigError("beta_contact", f"{self.beta_contact} outside [0, 1]")
        if self.beta_fomite < 0:
            raise ConfigError("beta_fomite", "must be >= 0")
        if self.deposit_rate < 0:
            raise ConfigError("deposit_rate", "must be >= 0")
        if self.decay_half_life_days <= 0:
            raise ConfigError("decay_half_life_days", "must be > 0")
        if self.e_mean_days <= 0:
            raise ConfigError("e_mean_days", "must be > 0")
        if self.i_mean_days <= 0:
            raise ConfigError("i_mean_days", "must be > 0")
        if self.test_delay_days < 0:
            raise ConfigError("test_delay_days", "must be >= 0")
        if self.horizon_days < 1:
            raise ConfigError("horizon_days", "must be >= 1")
        if not 0 <= self.n_index_cases <= self.n_agents:
            raise ConfigError("n_index_cases", "must be in [0, n_agents]")
        if self.n_workplaces < 0:
            raise ConfigError("n_workplaces", "must be >= 0")
        if self.n_workplaces > self.width * self.height:
            raise ConfigError("n_workplaces", "more workplaces than cells")
        if self.errand_mode not in ("random", "staggered"):
            raise ConfigError("errand_mode", f"unknown mode {self.errand_mode!r}")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed", "must fit in u64")
        for cell in self.shared_space_cells:
            x, y = cell
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ConfigError("shared_space_cells", f"cell {cell} outside the grid")

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["intervention"] = self.intervention.value
        obj["shared_space_cells"] = [list(c) for c in self.shared_space_cells]
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        for key in obj:
            if key not in known:
                raise ConfigError(key, "unknown config field")
        kwargs = dict(obj)
        if "intervention" in kwargs:
            try:
                kwargs["intervention"] = Intervention(kwargs["intervention"])
            except ValueError:
                raise ConfigError("intervention", f"unknown intervention {kwargs['intervention']!r}") from None
        if "shared_space_cells" in kwargs:
            try:
                kwargs["shared_space_cells"] = tuple(tuple(int(v) for v in c) for c in kwargs["shared_space_cells"])
            except (TypeError, ValueError):
                raise ConfigError("shared_space_cells", "expected a list of [x, y] pairs") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ScenarioConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError("<file>", f"invalid JSON: {e}") from None
        if not isinstance(obj, dict):
            raise ConfigError("<file>", "top-level config must be an object")
        return cls.from_json(obj)


@dataclass(frozen=True)
class InfectionEvent:
    epoch: int
    infectee: int
    infector: int | None  # None = environmental (surface) pickup
    channel: str  # "contact" | "fomite" | "seed"
    cell: tuple[int, int]
    generation: int


@dataclass(frozen=True)
class NotifyEvent:
    epoch: int
    source: int  # whose report triggered the match
    target: int
    disease_at: str  # target's underlying disease state when notified


@dataclass(frozen=True)
class TestEvent:
    epoch: int
    agent: int


@dataclass
class DayRow:
    day: int
    s: int
    e: int
    i: int
    r: int
    q: int
    new_infections: int


@dataclass
class SimMetrics:
    n_agents: int
    days: int
    attack_rate: float
    total_infected: int
    r_eff_by_generation: list[float]
    traced_fraction: float
    hotspot_recall: float | None
    hotspot_precision: float | None
    quarantine_person_days: float
    detectable_pair_fraction: float | None
    contact_pairs: int

    def to_json(self) -> dict:
        return asdict(self)


class Agent:
    """One simulated citizen; plain slots class for loop speed."""

    __slots__ = (
        "id", "home", "work", "has_app", "state", "disease", "generation",
        "e_until", "i_until", "i_entry", "test_at", "tested", "q_until",
        "positive_hold", "cell", "errand_epoch", "errand_cell",
        "seed_chain", "ephid_cache", "store", "pds",
    )

    def __init__(self, agent_id: int, home: int, work: int, has_app: bool) -> None:
        self.id = agent_id
        self.home = home
        self.work = work
        self.has_app = has_app
        self.state = "S"
        self.disease = "S"
        self.generation: int | None = None
        self.e_until = 0.0
        self.i_until = 0.0
        self.i_entry = -1
        self.test_at: float | None = None
        self.tested = False
        self.q_until = 0
        self.positive_hold = False
        self.cell = home
        self.errand_epoch = -1
        self.errand_cell = -1
        self.seed_chain: list[DailySeed] = []
        self.ephid_cache: dict[int, bytes] = {}
        self.store: ContactStore | None = None
        self.pds: PersonalDataStore | None = None

    def current_ephid(self, epoch_of_day: int) -> bytes:
        cached = self.ephid_cache.get(epoch_of_day)
        if cached is None:
            cached = derive_epoch_id(self.seed_chain[-1].secret, epoch_of_day)
            self.ephid_cache[epoch_of_day] = cached
        return cached


class Simulation:
    """One scenario run; create, call run(), then read metrics/artifacts."""

    def __init__(self, cfg: ScenarioConfig) -> None:
        cfg.validate()
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.epoch = 0
        self.width, self.height = cfg.width, cfg.height
        self._n_cells = cfg.width * cfg.height
        self._shared = [self._cell_id(x, y) for x, y in cfg.shared_space_cells]
        self.contamination: dict[int, float] = {c: 0.0 for c in self._shared}
        self._decay_factor = 2.0 ** (-1.0 / (cfg.decay_half_life_days * EPOCHS_PER_DAY))

        self.board = PublicBoard()
        self.location_store = LocationStore()
        self.published_reports: list = []
        self._location_pseudonyms: set[bytes] = set()
        self._sample_errand_fix = cfg.intervention.uploads_location

        self.infections: list[InfectionEvent] = []
        self.notifications: list[NotifyEvent] = []
        self.tests: list[TestEvent] = []
        self.day_rows: list[DayRow] = []
        self._new_infections_today = 0
        self._gen_members: dict[int, int] = {}
        self._gen_caused: dict[int, int] = {}
        self._q_epochs = 0
        self._pairs_all: set[int] = set()
        self._pairs_app: set[int] = set()
        self._partners: dict[int, dict[int, int]] = {}

        self.agents = self._build_agents()
        self._seed_index_cases()

    # -- setup ---------------------------------------------------------------

    def _cell_id(self, x: int, y: int) -> int:
        return x * self.height + y

    def cell_xy(self, cell: int) -> tuple[int, int]:
        return divmod(cell, self.height)

    def _build_agents(self) -> list[Agent]:
        cfg, rng = self.cfg, self.rng
        shared = set(self._shared)
        residential = [c for c in range(self._n_cells) if c not in shared]
        if not residential:
            raise ConfigError("shared_space_cells", "no non-shared cells left to live in")
        workplaces: list[int] = []
        if cfg.n_workplaces > 0:
            if cfg.n_workplaces > len(residential):
                raise ConfigError("n_workplaces", "more workplaces than non-shared cells")
            workplaces = rng.sample(residential, cfg.n_workplaces)
        # quota sampling gives exactly round(p*N) carriers, so measured
        # adoption effects are not blurred by realized-p noise
        n_app = round(cfg.adoption * cfg.n_agents)
        app_ids = set(rng.sample(range(cfg.n_agents), n_app))
        agents = []
        for aid in range(cfg.n_agents):
            home = residential[rng.randrange(len(residential))]
            work = workplaces[rng.randrange(len(workplaces))] if workplaces else home
            has_app = aid in app_ids
            agent = Agent(aid, home, work, has_app)
            if has_app:
                agent.seed_chain = [DailySeed(0, rng.randbytes(32))]
                agent.store = ContactStore()
                agent.pds = PersonalDataStore(
                    rng=random.Random(rng.getrandbits(64)),
                    contact_store=agent.store,
                    retention_days=PDS_RETENTION_DAYS,
                )
                agent.pds.grant_consent(Purpose.LOCATION_UPLOAD)
                agent.pds.grant_consent(Purpose.CONTACT_UPLOAD)
                self._partners[aid] = {}
            agents.append(agent)
        return agents

    def _seed_index_cases(self) -> None:
        for aid in sorted(self.rng.sample(range(self.cfg.n_agents), self.cfg.n_index_cases)):
            agent = self.agents[aid]
            agent.state = agent.disease = "I"
            agent.generation = 0
            agent.i_entry = 0
            agent.i_until = self.rng.expovariate(1.0 / self.cfg.i_mean_days) * EPOCHS_PER_DAY
            agent.test_at = self.cfg.test_delay_days * EPOCHS_PER_DAY
            self._gen_members[0] = self._gen_members.get(0, 0) + 1
            self.infections.append(InfectionEvent(0, aid, None, "seed", self.cell_xy(agent.home), 0))

    # -- the epoch kernel ------------------------------------------------------

    def run(self) -> SimMetrics:
        total_epochs = self.cfg.horizon_days * EPOCHS_PER_DAY
        while self.epoch < total_epochs:
            self.step_epoch()
        return self.metrics()

    def step_epoch(self) -> None:
        day, eod = divmod(self.epoch, EPOCHS_PER_DAY)
        if eod == 0:
            self._start_day(day)

        occupancy = self._move_agents(eod)

        if self.cfg.beta_contact > 0:
            self._contact_transmission(occupancy)
        if self._shared:
            self._fomite_step(occupancy)
            for cell in self._shared:
                self.contamination[cell] *= self._decay_factor
        self._log_encounters(occupancy, day, eod)
        self._progress_disease()
        self._run_tests(day)

        if self.cfg.intervention.uploads_location and eod % PDS_SAMPLE_EVERY == 0:
            self._sample_locations()

        if eod == EPOCHS_PER_DAY - 1:
            self._close_day(day)
        self.epoch += 1

    def _start_day(self, day: int) -> None:
        cfg, rng = self.cfg, self.rng
        self.board.prune(day)
        prune_day = day % STORE_PRUNE_EVERY_DAYS == 0
        for agent in self.agents:
            if agent.has_app:
                if day > 0:
                    agent.seed_chain.append(derive_next_seed(agent.seed_chain[-1]))
                    if len(agent.seed_chain) > REPORT_WINDOW_DAYS:
                        del agent.seed_chain[0]
                    agent.ephid_cache.clear()
                if prune_day:
                    # lazy retention: stale records cannot match a fresh
                    # report anyway (their IDs derive from seeds outside
                    # every future report window), so weekly is enough
                    agent.store.prune(day)
        if not self._shared:
            return
        if cfg.errand_mode == "random":
            for agent in self.agents:
                agent.errand_epoch = rng.randrange(ERRAND_START, ERRAND_END)
                agent.errand_cell = self._shared[rng.randrange(len(self._shared))]
        else:  # staggered: spread agents over (cell, epoch) slots
            order = list(range(cfg.n_agents))
            rng.shuffle(order)
            slots = [(c, ep) for c in self._shared for ep in range(ERRAND_START, ERRAND_END)]
            for pos, aid in enumerate(order):
                cell, ep = slots[pos % len(slots)]
                self.agents[aid].errand_cell = cell
                self.agents[aid].errand_epoch = ep

    def _move_agents(self, eod: int) -> dict[int, list[Agent]]:
        occupancy: dict[int, list[Agent]] = {}
        working = WORK_START <= eod < WORK_END
        sample_errands = self._sample_errand_fix
        t = self.epoch * SECONDS_PER_EPOCH
        q_now = 0
        for agent in self.agents:
            if agent.state == "Q":
                cell = agent.home
                q_now += 1
            elif eod == agent.errand_epoch:
                cell = agent.errand_cell
                if sample_errands and agent.pds is not None:
                    # hourly fixes would miss most 15-minute errands
                    x, y = divmod(cell, self.height)
                    agent.pds.append_location(
                        LocationPoint((x + 0.5) * WORLD_CELL_DEG, (y + 0.5) * WORLD_CELL_DEG, t)
                    )
            elif working:
                cell = agent.work
            else:
                cell = agent.home
            agent.cell = cell
            group = occupancy.get(cell)
            if group is None:
                occupancy[cell] = [agent]
            else:
                group.append(agent)
        self._q_epochs += q_now
        return occupancy

    def _contact_transmission(self, occupancy: dict[int, list[Agent]]) -> None:
        beta, rng = self.cfg.beta_contact, self.rng
        for cell in sorted(occupancy):
            members = occupancy[cell]
            if len(members) < 2:
                continue
            infectious = [a for a in members if a.state == "I"]
            if not infectious:
                continue
            for target in members:
                if target.state != "S":
                    continue
                for source in infectious:
                    if rng.random() < beta:
                        self._infect(target, source, "contact", cell)
                        break

    def _fomite_step(self, occupancy: dict[int, list[Agent]]) -> None:
        cfg, rng = self.cfg, self.rng
        for cell in self._shared:
            members = occupancy.get(cell)
            if not members:
                continue
            level = self.contamination[cell]
            deposits = sum(1 for a in members if a.state == "I")
            if deposits:
                level += cfg.deposit_rate * deposits
                self.contamination[cell] = level
            if level <= 0.0 or cfg.beta_fomite <= 0.0:
                continue
            p_pickup = min(1.0, cfg.beta_fomite * level)
            for target in members:
                if target.state == "S" and rng.random() < p_pickup:
                    self._infect(target, None, "fomite", cell)

    def _infect(self, target: Agent, source: Agent | None, channel: str, cell: int) -> None:
        target.disease = "E"
        if target.state == "S":
            target.state = "E"
        target.e_until = self.epoch + self.rng.expovariate(1.0 / self.cfg.e_mean_days) * EPOCHS_PER_DAY
        generation = 0 if source is None else source.generation + 1
        target.generation = generation
        self._gen_members[generation] = self._gen_members.get(generation, 0) + 1
        if source is not None:
            self._gen_caused[source.generation] = self._gen_caused.get(source.generation, 0) + 1
        self._new_infections_today += 1
        self.infections.append(
            InfectionEvent(self.epoch, target.id, source.id if source else None, channel, self.cell_xy(cell), generation)
        )

    def _log_encounters(self, occupancy: dict[int, list[Agent]], day: int, eod: int) -> None:
        n_agents = self.cfg.n_agents
        pairs_all = self._pairs_all
        pairs_app = self._pairs_app
        for cell in sorted(occupancy):
            members = occupancy[cell]
            if len(members) < 2:
                continue
            n = len(members)
            for i in range(n):
                a = members[i]
                for j in range(i + 1, n):
                    b = members[j]
                    key = a.id * n_agents + b.id
                    pairs_all.add(key)
                    if not (a.has_app and b.has_app):
                        continue
                    pairs_app.add(key)
                    eph_b = b.ephid_cache.get(eod) or b.current_ephid(eod)
                    eph_a = a.ephid_cache.get(eod) or a.current_ephid(eod)
                    a.store.record_encounter(
                        EncounterRecord(eph_b, day, eod, ENCOUNTER_DURATION_MIN, ENCOUNTER_ATTENUATION)
                    )
                    b.store.record_encounter(
                        EncounterRecord(eph_a, day, eod, ENCOUNTER_DURATION_MIN, ENCOUNTER_ATTENUATION)
                    )
                    self._partners[a.id][b.id] = day
                    self._partners[b.id][a.id] = day

    def _progress_disease(self) -> None:
        now = self.epoch
        for agent in self.agents:
            disease = agent.disease
            if disease == "E":
                if now >= agent.e_until:
                    agent.disease = "I"
                    agent.i_entry = now
                    agent.i_until = now + self.rng.expovariate(1.0 / self.cfg.i_mean_days) * EPOCHS_PER_DAY
                    agent.test_at = now + self.cfg.test_delay_days * EPOCHS_PER_DAY
                    if agent.state == "E":
                        agent.state = "I"
            elif disease == "I":
                if now >= agent.i_until:
                    agent.disease = "R"
                    if agent.state == "I":
                        agent.state = "R"
            if agent.state == "Q" and now >= agent.q_until:
                if not agent.positive_hold or agent.disease == "R":
                    agent.state = agent.disease
                    agent.positive_hold = False

    def _run_tests(self, day: int) -> None:
        now = self.epoch
        for agent in self.agents:
            if agent.tested or agent.test_at is None or now < agent.test_at:
                continue
            if agent.disease != "I":
                agent.test_at = None  # recovered before the result mattered
                continue
            self.on_positive_test(agent, day)

    def on_positive_test(self, agent: Agent, day: int) -> None:
        """Isolate a confirmed positive and fire the mode's app channels."""
        agent.tested = True
        agent.state = "Q"
        agent.positive_hold = True
        agent.q_until = self.epoch + QUARANTINE_DAYS * EPOCHS_PER_DAY
        self.tests.append(TestEvent(self.epoch, agent.id))

        mode = self.cfg.intervention
        if not (agent.has_app and mode.traces_contacts):
            return

        report = report_from_seeds(agent.seed_chain[-REPORT_WINDOW_DAYS:])
        self.board.publish_report(report, published_day=day)
        self.published_reports.append(report)
        ids = report_id_set(report)
        for peer_id in sorted(self._partners.get(agent.id, ())):
            peer = self.agents[peer_id]
            if peer.id == agent.id or not peer.has_app:
                continue
            events = peer.store.check_exposure_ids(ids)
            if not events:
                continue
            self.notifications.append(NotifyEvent(self.epoch, agent.id, peer.id, peer.disease))
            if peer.state != "Q":
                peer.state = "Q"
            peer.q_until = max(peer.q_until, self.epoch + QUARANTINE_DAYS * EPOCHS_PER_DAY)

        if mode.uploads_location and agent.pds.has_consent(Purpose.LOCATION_UPLOAD):
            window = (max(0, day - (REPORT_WINDOW_DAYS - 1)), day)
            payload, _consent = agent.pds.build_share_payload(
                Purpose.LOCATION_UPLOAD,
                Granularity.grid(WORLD_CELL_DEG, 60),
                window,
                now=self.epoch * SECONDS_PER_EPOCH,
            )
            self._location_pseudonyms.add(payload.pseudonym)
            self.location_store.ingest_location_payload(payload)

    def _sample_locations(self) -> None:
        t = self.epoch * SECONDS_PER_EPOCH
        for agent in self.agents:
            if agent.pds is None:
                continue
            x, y = self.cell_xy(agent.cell)
            agent.pds.append_location(
                LocationPoint((x + 0.5) * WORLD_CELL_DEG, (y + 0.5) * WORLD_CELL_DEG, t)
            )

    def _close_day(self, day: int) -> None:
        counts = {"S": 0, "E": 0, "I": 0, "R": 0, "Q": 0}
        for agent in self.agents:
            counts[agent.state] += 1
        assert sum(counts.values()) == self.cfg.n_agents, "state conservation violated"
        self.day_rows.append(
            DayRow(day, counts["S"], counts["E"], counts["I"], counts["R"], counts["Q"], self._new_infections_today)
        )
        self._new_infections_today = 0

    # -- results ---------------------------------------------------------------

    def density_space(self, bin_seconds: int = 3600) -> CellIndexSpace:
        """Analysis space over every world cell, binned like the uploads.

        Hourly bins keep the anonymity threshold meaningful: one uploader
        contributes at most a visit or two per (cell, hour), so a count of
        K_ANON really means K_ANON people, not one person dwelling.
        """
        cells = tuple((x, y) for x in range(self.width) for y in range(self.height))
        bins = tuple(b * bin_seconds for b in range(self.cfg.horizon_days * 86400 // bin_seconds))
        return CellIndexSpace(cells, bins, bin_seconds)

    def detected_hotspots(self):
        if not self.cfg.intervention.uploads_location:
            return []
        dmap = self.location_store.build_density_map(self.density_space())
        return detect_hotspots(dmap)

    def ground_truth_fomite_cells(self) -> set[tuple[int, int]]:
        return {e.cell for e in self.infections if e.channel == "fomite"}

    def metrics(self) -> SimMetrics:
        cfg = self.cfg
        infected_ids = {e.infectee for e in self.infections}
        total_infected = len(infected_ids)

        max_gen = max(self._gen_members) if self._gen_members else -1
        r_eff = [
            self._gen_caused.get(g, 0) / self._gen_members[g]
            for g in range(max_gen + 1)
            if self._gen_members.get(g)
        ]

        transmissions = [e for e in self.infections if e.channel != "seed"]
        traced = 0
        notified_by = {}
        for n in self.notifications:
            notified_by.setdefault(n.target, []).append(n)
        for e in transmissions:
            if e.infector is None:
                continue  # environmental pickups have no traceable link
            for n in notified_by.get(e.infectee, ()):
                if n.source == e.infector and n.disease_at == "E" and n.epoch >= e.epoch:
                    traced += 1
                    break
        traced_fraction = traced / len(transmissions) if transmissions else 0.0

        truth = self.ground_truth_fomite_cells()
        hotspot_cells = {h.cell for h in self.detected_hotspots()}
        if truth:
            recall = len(hotspot_cells & truth) / len(truth)
            precision = (len(hotspot_cells & truth) / len(hotspot_cells)) if hotspot_cells else None
        else:
            recall = None
            precision = None

        pair_fraction = (len(self._pairs_app) / len(self._pairs_all)) if self._pairs_all else None

        return SimMetrics(
            n_agents=cfg.n_agents,
            days=cfg.horizon_days,
            attack_rate=total_infected / cfg.n_agents,
            total_infected=total_infected,
            r_eff_by_generation=r_eff,
            traced_fraction=traced_fraction,
            hotspot_recall=recall,
            hotspot_precision=precision,
            quarantine_person_days=self._q_epochs / EPOCHS_PER_DAY,
            detectable_pair_fraction=pair_fraction,
            contact_pairs=len(self._pairs_all),
        )

    # -- channel audit -----------------------------------------------------------

    def contact_channel_identifiers(self) -> set[bytes]:
        """Everything observable on the contact channel over the whole run."""
        out: set[bytes] = set()
        for report in self.published_reports:
            out.update(report.seeds)
            out.update(report_id_set(report))
        return out

    def location_channel_identifiers(self) -> set[bytes]:
        """Pseudonyms that crossed the location channel over the whole run."""
        return set(self._location_pseudonyms)

    # -- artifacts ----------------------------------------------------------------

    def write_outputs(self, outdir: str | Path) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        metrics = self.metrics()
        self._write_metrics_csv(outdir / "metrics.csv", metrics.r_eff_by_generation)
        self._write_events_log(outdir / "events.log")
        export_hotspots_json(self.detected_hotspots(), outdir / "hotspots.json")
        (outdir / "summary.json").write_text(json.dumps(metrics.to_json(), indent=2, sort_keys=True) + "\n")

    def _write_metrics_csv(self, path: Path, r_eff: list[float]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["day", "s", "e", "i", "r", "q", "new_infections", "r_eff_generation"])
            for row in self.day_rows:
                gen_val = f"{r_eff[row.day]:.6f}" if row.day < len(r_eff) else ""
                w.writerow([row.day, row.s, row.e, row.i, row.r, row.q, row.new_infections, gen_val])

    def _write_events_log(self, path: Path) -> None:
        lines = []
        for e in self.infections:
            infector = e.infector if e.infector is not None else "-"
            lines.append(
                f"INFECT epoch={e.epoch} channel={e.channel} infectee={e.infectee} "
                f"infector={infector} cell={e.cell[0]},{e.cell[1]} generation={e.generation}"
            )
        for t in self.tests:
            lines.append(f"TEST epoch={t.epoch} agent={t.agent}")
        for n in self.notifications:
            lines.append(f"NOTIFY epoch={n.epoch} source={n.source} target={n.target} disease={n.disease_at}")
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def run_scenario(cfg: ScenarioConfig, outdir: str | Path | None = None) -> SimMetrics:
    """Run one scenario to completion; optionally write the artifact files."""
    sim = Simulation(cfg)
    metrics = sim.run()
    if outdir is not None:
        sim.write_outputs(outdir)
    return metrics


SWEEP_METRIC_COLUMNS = [
    "attack_rate",
    "total_infected",
    "traced_fraction",
    "quarantine_person_days",
    "detectable_pair_fraction",
    "hotspot_recall",
    "hotspot_precision",
]


def sweep(base: ScenarioConfig, axes: dict[str, Sequence], out_csv: str | Path | None = None) -> list[dict]:
    """Run the cartesian product of parameter axes over a base config.

    Every grid point reruns with its own (fixed) config, so a repeated
    sweep reproduces the same table.
    """
    names = list(axes)
    rows: list[dict] = []
    for combo in product(*(axes[n] for n in names)):
        overrides = dict(zip(names, combo))
        if "intervention" in overrides and not isinstance(overrides["intervention"], Intervention):
            overrides["intervention"] = Intervention(overrides["intervention"])
        cfg = replace(base, **overrides)
        cfg.validate()
        metrics = run_scenario(cfg)
        row = {n: overrides[n] for n in names}
        for col in SWEEP_METRIC_COLUMNS:
            row[col] = getattr(metrics, col)
        row["r_eff_by_generation"] = ";".join(f"{v:.6f}" for v in metrics.r_eff_by_generation)
        rows.append(row)
    if out_csv is not None:
        _write_sweep_csv(rows, names, Path(out_csv))
    return rows


def _write_sweep_csv(rows: list[dict], names: list[str], path: Path) -> None:
    header = names + SWEEP_METRIC_COLUMNS + ["r_eff_by_generation"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            out = []
            for col in header:
                val = row[col]
                if isinstance(val, Intervention):
                    val = val.value
                if isinstance(val, float):
                    val = f"{val:.6f}"
                if val is None:
                    val = ""
                out.append(val)
            w.writerow(out)


def default_shared_cells(width: int, height: int, k: int) -> tuple[tuple[int, int], ...]:
    """Evenly spread k shared-space cells across the grid, deterministically."""
    cells = []
    for idx in range(k):
        frac = (idx + 0.5) / k
        x = min(width - 1, int(frac * width))
        y = min(height - 1, int((0.5 + 0.37 * idx) % 1.0 * height))
        cells.append((x, y))
    deduped = []
    for c in cells:
        if c not in deduped:
            deduped.append(c)
    return tuple(deduped)
