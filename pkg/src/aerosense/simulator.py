"""Synthetic terminal-area traffic and lossy ADS-B-like message streams.

Flights follow piecewise-linear waypoint tracks at constant speed per segment
with altitude interpolated linearly along each segment.  Spawns are an
inhomogeneous Poisson process by hour of day, and every message is dropped
independently with ``drop_prob``.  Output is a columnar :class:`MessageTable`
because a two-week run produces millions of messages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .geometry import AirspaceConfig, EnuPoint, GeoPoint, from_enu

# flights per hour by hour of day; morning and evening peaks
DEFAULT_HOURLY_RATE = (
    8, 5, 4, 4, 8, 18, 36, 60, 84, 84, 60, 48,
    45, 45, 48, 54, 66, 78, 84, 66, 48, 36, 24, 14,
)

MAX_TURN_RATE = 3.0  # deg/s

KINDS = ("arrival", "departure", "overflight")


@dataclass(frozen=True)
class AdsbMessage:
    aircraft_id: str
    t: float
    pos: GeoPoint
    v_gs: float  # km/h
    v_vs: float  # m/s
    heading: float  # deg clockwise from north
    v_dial: float  # km/h
    h_dial: float  # m

    def is_valid(self) -> bool:
        vals = (self.t, self.pos.lat, self.pos.lon, self.pos.alt, self.v_gs,
                self.v_vs, self.heading, self.v_dial, self.h_dial)
        return (all(math.isfinite(v) for v in vals) and self.t >= 0
                and self.v_gs >= 0 and 0 <= self.heading < 360)

    def to_record(self) -> dict:
        return {
            "aircraft_id": self.aircraft_id, "t": self.t,
            "lat": self.pos.lat, "lon": self.pos.lon, "alt": self.pos.alt,
            "v_gs": self.v_gs, "v_vs": self.v_vs, "heading": self.heading,
            "v_dial": self.v_dial, "h_dial": self.h_dial,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AdsbMessage":
        return cls(
            str(rec["aircraft_id"]), float(rec["t"]),
            GeoPoint(float(rec["lat"]), float(rec["lon"]), float(rec["alt"])),
            float(rec["v_gs"]), float(rec["v_vs"]), float(rec["heading"]),
            float(rec["v_dial"]), float(rec["h_dial"]),
        )


NUMERIC_FIELDS = ("t", "lat", "lon", "alt", "v_gs", "v_vs", "heading", "v_dial", "h_dial")


class MessageTable:
    """Columnar, time-ordered message store.

    Aircraft ids are kept as integer ``codes`` into ``names``; ``ids`` gives
    the per-row strings.  Indexing with an int yields an :class:`AdsbMessage`;
    indexing with a slice, mask or index array yields a new table.
    """

    def __init__(self, ids=None, *, codes=None, names=None, **columns):
        if ids is not None:
            names, codes = np.unique(np.asarray(ids, dtype=str), return_inverse=True)
        elif codes is None:
            codes, names = np.empty(0, dtype=np.int64), np.empty(0, dtype=str)
        self.codes = np.asarray(codes, dtype=np.int64).reshape(-1)
        self.names = np.asarray(names, dtype=str).reshape(-1)
        n = len(self.codes)
        for name in NUMERIC_FIELDS:
            col = np.asarray(columns.get(name, np.zeros(n)), dtype=float)
            if col.shape != (n,):
                raise ValueError(f"column {name} has shape {col.shape}, expected ({n},)")
            setattr(self, name, col)

    @property
    def ids(self) -> np.ndarray:
        return self.names[self.codes] if len(self.codes) else np.empty(0, dtype=str)

    @classmethod
    def empty(cls) -> "MessageTable":
        return cls()

    @classmethod
    def from_messages(cls, messages: Sequence[AdsbMessage]) -> "MessageTable":
        return cls.from_records([m.to_record() for m in messages])

    @classmethod
    def from_records(cls, recs: Sequence[dict]) -> "MessageTable":
        if not recs:
            return cls.empty()
        ids = [str(r["aircraft_id"]) for r in recs]
        cols = {name: [float(r[name]) for r in recs] for name in NUMERIC_FIELDS}
        return cls(ids, **cols)

    @classmethod
    def concat(cls, tables: Sequence["MessageTable"]) -> "MessageTable":
        tables = [t for t in tables if len(t)]
        if not tables:
            return cls.empty()
        names = np.unique(np.concatenate([t.names for t in tables]))
        codes = np.concatenate([np.searchsorted(names, t.names)[t.codes] for t in tables])
        cols = {name: np.concatenate([getattr(t, name) for t in tables]) for name in NUMERIC_FIELDS}
        return cls(codes=codes, names=names, **cols)

    def __len__(self) -> int:
        return len(self.codes)

    def __getitem__(self, key):
        if isinstance(key, (int, np.integer)):
            return self.message(int(key))
        return MessageTable(codes=self.codes[key], names=self.names,
                            **{n: getattr(self, n)[key] for n in NUMERIC_FIELDS})

    def __iter__(self) -> Iterator[AdsbMessage]:
        for i in range(len(self)):
            yield self.message(i)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MessageTable) or len(self) != len(other):
            return False
        return bool(np.array_equal(self.ids, other.ids)) and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in NUMERIC_FIELDS)

    def message(self, i: int) -> AdsbMessage:
        return AdsbMessage(
            str(self.names[self.codes[i]]), float(self.t[i]),
            GeoPoint(float(self.lat[i]), float(self.lon[i]), float(self.alt[i])),
            float(self.v_gs[i]), float(self.v_vs[i]), float(self.heading[i]),
            float(self.v_dial[i]), float(self.h_dial[i]),
        )

    def records(self) -> Iterator[dict]:
        for m in self:
            yield m.to_record()

    def geo(self) -> np.ndarray:
        """(n, 3) array of lat, lon, alt_m."""
        return np.column_stack([self.lat, self.lon, self.alt])

    def valid_mask(self) -> np.ndarray:
        finite = np.ones(len(self), dtype=bool)
        for name in NUMERIC_FIELDS:
            finite &= np.isfinite(getattr(self, name))
        return (finite & (self.t >= 0) & (self.v_gs >= 0)
                & (self.heading >= 0) & (self.heading < 360)
                & (np.abs(self.lat) <= 90) & (np.abs(self.lon) <= 180) & (self.alt >= -500))

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.t) >= 0))


@dataclass(frozen=True)
class FlightPlan:
    """A track from ``entry`` through ``waypoints``.

    ``speeds`` gives the ground speed (km/h) of each leg; the first leg runs
    from ``entry`` to ``waypoints[0]``.
    """

    spawn_t: float
    entry: EnuPoint
    waypoints: tuple[EnuPoint, ...]
    cruise_speed: float
    descent_rate: float
    kind: str
    speeds: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("a flight plan needs at least two waypoints")
        if not 200 <= self.cruise_speed <= 900:
            raise ValueError("cruise_speed must lie in [200, 900] km/h")
        if self.kind not in KINDS:
            raise ValueError(f"unknown flight kind {self.kind!r}")
        if not self.speeds:
            object.__setattr__(self, "speeds", (self.cruise_speed,) * len(self.waypoints))
        if len(self.speeds) != len(self.waypoints):
            raise ValueError("one speed per leg is required")

    def points(self) -> np.ndarray:
        pts = [self.entry, *self.waypoints]
        return np.array([[p.x, p.y, p.z] for p in pts], dtype=float)

    def leg_durations(self) -> np.ndarray:
        """Seconds per leg (horizontal length over ground speed)."""
        pts = self.points()
        lengths = np.linalg.norm(np.diff(pts[:, :2], axis=0), axis=1)
        return lengths / np.asarray(self.speeds) * 3600.0

    @property
    def end_t(self) -> float:
        return self.spawn_t + float(np.sum(self.leg_durations()))


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    duration: float = 86400.0
    hourly_rate: tuple[float, ...] = DEFAULT_HOURLY_RATE
    msg_period: float = 4.0
    drop_prob: float = 0.1
    kind_mix: tuple[float, float, float] = (0.45, 0.35, 0.20)
    receiver_range_km: float = 260.0

    def validate(self) -> None:
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if len(self.hourly_rate) == 0:
            raise ValueError("hourly_rate must not be empty")
        if len(self.hourly_rate) != 24 or min(self.hourly_rate) < 0:
            raise ValueError("hourly_rate needs 24 nonnegative entries")
        if not self.msg_period > 0:
            raise ValueError("msg_period must be positive")
        if not 0 <= self.drop_prob < 1:
            raise ValueError("drop_prob must lie in [0, 1)")
        if len(self.kind_mix) != 3 or min(self.kind_mix) < 0 or abs(sum(self.kind_mix) - 1) > 1e-9:
            raise ValueError("kind_mix must be three probabilities summing to 1")


# kinematics ----------------------------------------------------------------

@dataclass
class KinematicState:
    x: float  # km
    y: float  # km
    alt: float  # m
    v_gs: float  # km/h
    v_vs: float  # m/s
    heading: float  # deg
    target: EnuPoint | None = None


def bearing(dx, dy):
    """Compass bearing in [0, 360) of the displacement (dx east, dy north)."""
    b = np.mod(np.degrees(np.arctan2(dx, dy)), 360.0)
    return np.where(b >= 360.0, 0.0, b)


def kinematic_step(state: KinematicState, dt: float) -> KinematicState:
    """Advance one step: turn toward the target at most 3 deg/s, then fly straight.

    A target exactly behind the aircraft is turned toward clockwise.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    heading = state.heading
    if state.target is not None:
        want = float(bearing(state.target.x - state.x, state.target.y - state.y))
        diff = (want - heading + 180.0) % 360.0 - 180.0
        if diff == -180.0:
            diff = 180.0
        max_turn = MAX_TURN_RATE * dt
        heading = (heading + max(-max_turn, min(max_turn, diff))) % 360.0
    dist = state.v_gs * dt / 3600.0
    rad = math.radians(heading)
    return KinematicState(
        x=state.x + dist * math.sin(rad),
        y=state.y + dist * math.cos(rad),
        alt=state.alt + state.v_vs * dt,
        v_gs=state.v_gs,
        v_vs=state.v_vs,
        heading=heading,
        target=state.target,
    )


# emission ------------------------------------------------------------------

def track_states(plan: FlightPlan, times: np.ndarray) -> dict[str, np.ndarray]:
    """Evaluate the piecewise-linear track at ``times`` (absolute seconds)."""
    pts = plan.points()
    durations = plan.leg_durations()
    ends = plan.spawn_t + np.cumsum(durations)
    starts = ends - durations
    leg = np.clip(np.searchsorted(ends, times, side="left"), 0, len(durations) - 1)
    frac = np.clip((times - starts[leg]) / durations[leg], 0.0, 1.0)
    a, b = pts[leg], pts[leg + 1]
    pos = a + frac[:, None] * (b - a)
    d = b - a
    speeds = np.asarray(plan.speeds)[leg]
    return {
        "x": pos[:, 0], "y": pos[:, 1], "z": pos[:, 2],
        "v_gs": speeds,
        "v_vs": d[:, 2] * 1000.0 / durations[leg],
        "heading": bearing(d[:, 0], d[:, 1]),
        "v_dial": speeds,
        "h_dial": b[:, 2] * 1000.0,
    }


def flight_messages(plan: FlightPlan, aircraft_id: str, airspace: AirspaceConfig,
                    msg_period: float, drop_prob: float, rng: np.random.Generator,
                    until: float = math.inf, receiver_range: float = math.inf) -> MessageTable:
    """Messages every ``msg_period`` from spawn to the end of the track (inclusive).

    Positions farther than ``receiver_range`` km (horizontally) from the
    approach area center are not received.
    """
    end = min(plan.end_t, until)
    n = int(math.floor((end - plan.spawn_t) / msg_period + 1e-9)) + 1 if end >= plan.spawn_t else 0
    times = plan.spawn_t + msg_period * np.arange(n)
    keep = rng.random(n) >= drop_prob
    s = track_states(plan, times)
    reach = np.hypot(s["x"] - airspace.ap.center[0], s["y"] - airspace.ap.center[1])
    keep &= reach <= receiver_range
    s = {k: v[keep] for k, v in s.items()}
    geo = from_enu(np.column_stack([s["x"], s["y"], s["z"]]), airspace.origin)
    return MessageTable(
        codes=np.zeros(int(keep.sum()), dtype=np.int64), names=[aircraft_id],
        t=times[keep], lat=geo[:, 0], lon=geo[:, 1], alt=geo[:, 2],
        v_gs=s["v_gs"], v_vs=s["v_vs"], heading=s["heading"],
        v_dial=s["v_dial"], h_dial=s["h_dial"],
    )


# planning ------------------------------------------------------------------

def _region_radius(airspace: AirspaceConfig) -> float:
    fp = airspace.ar.footprint
    return float(np.max(np.linalg.norm(fp - airspace.ar.center[:2], axis=1)))


def plan_flight(kind: str, spawn_t: float, airspace: AirspaceConfig,
                rng: np.random.Generator) -> FlightPlan:
    """Draw a random plan of the given kind around the airspace.

    Arrivals and overflights start far enough out that they need more than
    fifteen minutes to reach the area control region.  Arrivals slow to
    approach speed once inside the scope buffer, and departures taxi on the
    ground before takeoff, so most of the traffic a quarter hour ahead is
    already visible.
    """
    hub = airspace.ap.center[:2]
    r_ar = _region_radius(airspace)
    r_far = r_ar + airspace.buffer_km + 130.0
    ap_top = airspace.ap.alt_band[1]
    ar_lo, ar_hi = airspace.ar.alt_band
    brg = rng.uniform(0.0, 2 * np.pi)
    u = np.array([math.sin(brg), math.cos(brg)])
    w = np.array([u[1], -u[0]])  # perpendicular
    cruise = float(rng.uniform(700.0, 860.0))

    def pt(xy, z):
        return EnuPoint(float(xy[0]), float(xy[1]), float(z))

    if kind == "arrival":
        bend = rng.uniform(-0.35, 0.35)
        entry = pt(hub + r_far * u, rng.uniform(ar_hi + 1.0, ar_hi + 3.0))
        r_edge = r_ar + airspace.buffer_km + 10.0
        wps = (
            pt(hub + r_edge * u, ar_hi + rng.uniform(0.5, 1.0)),
            pt(hub + (r_ar + 10.0) * (u + bend * w), rng.uniform(ar_hi - 1.5, ar_hi - 0.3)),
            pt(hub + 40.0 * (u + 0.5 * bend * w), ap_top + rng.uniform(0.2, 0.8)),
            pt(hub + 12.0 * u, 0.9),
            pt(hub, 0.0),
        )
        speeds = (cruise, rng.uniform(380.0, 440.0), rng.uniform(340.0, 400.0),
                  rng.uniform(300.0, 340.0), 250.0)
    elif kind == "departure":
        bend = rng.uniform(-0.3, 0.3)
        stand = rng.uniform(0.0, 2 * np.pi)
        taxi = rng.uniform(4.0, 7.0)
        entry = pt(hub + taxi * np.array([math.sin(stand), math.cos(stand)]), 0.0)
        wps = (
            pt(hub, 0.0),
            pt(hub + 15.0 * u, 1.2),
            pt(hub + 45.0 * (u + 0.5 * bend * w), ap_top + rng.uniform(0.8, 1.5)),
            pt(hub + (r_ar + 20.0) * (u + bend * w), ar_hi + rng.uniform(0.3, 1.0)),
            pt(hub + r_far * (u + bend * w), ar_hi + rng.uniform(2.0, 3.0)),
        )
        speeds = (rng.uniform(20.0, 30.0), 280.0, rng.uniform(360.0, 420.0),
                  rng.uniform(520.0, 600.0), cruise)
    elif kind == "overflight":
        offset = rng.uniform(-0.8, 0.8) * r_ar
        z = rng.uniform(ar_lo + 1.0, ar_hi + 1.5)
        entry = pt(hub + r_far * u + offset * w, z)
        wps = (pt(hub + offset * w, z), pt(hub - r_far * u + offset * w, z))
        speeds = (cruise, cruise)
    else:
        raise ValueError(f"unknown flight kind {kind!r}")

    legs = np.array([[entry.x, entry.y, entry.z]] + [[p.x, p.y, p.z] for p in wps])
    horiz = np.linalg.norm(np.diff(legs[:, :2], axis=0), axis=1)
    secs = horiz / np.asarray(speeds) * 3600.0
    rate = float(np.max(np.abs(np.diff(legs[:, 2])) * 1000.0 / secs))
    return FlightPlan(spawn_t, entry, wps, cruise, rate, kind, tuple(float(s) for s in speeds))


def spawn_schedule(cfg: SimConfig, rng: np.random.Generator) -> list[tuple[float, str]]:
    """Spawn times and kinds: Poisson counts per wall-clock hour, uniform within it."""
    out = []
    n_hours = int(math.ceil(cfg.duration / 3600.0))
    for h in range(n_hours):
        start = h * 3600.0
        span = min(3600.0, cfg.duration - start)
        lam = cfg.hourly_rate[h % 24] * span / 3600.0
        n = int(rng.poisson(lam))
        times = np.sort(start + rng.uniform(0.0, span, size=n))
        kinds = rng.choice(len(KINDS), size=n, p=np.asarray(cfg.kind_mix, dtype=float))
        out.extend((float(t), KINDS[k]) for t, k in zip(times, kinds))
    return out


def generate_traffic(cfg: SimConfig, airspace: AirspaceConfig,
                     plans: Sequence[FlightPlan] | None = None) -> MessageTable:
    """Deterministic message stream for ``cfg.seed``, sorted by time.

    Pass ``plans`` to replay specific flights instead of drawing a schedule.
    Messages after ``cfg.duration`` are not emitted.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    if plans is None:
        plans = [plan_flight(kind, t, airspace, rng) for t, kind in spawn_schedule(cfg, rng)]
    names = np.array([f"SIM{i:06d}" for i in range(len(plans))], dtype=str)
    tables = [
        flight_messages(p, names[i], airspace, cfg.msg_period, cfg.drop_prob, rng,
                        until=cfg.duration, receiver_range=cfg.receiver_range_km)
        for i, p in enumerate(plans)
    ]
    if not any(len(t) for t in tables):
        return MessageTable.empty()
    codes = np.concatenate([np.full(len(t), i, dtype=np.int64) for i, t in enumerate(tables)])
    t_all = np.concatenate([t.t for t in tables])
    order = np.argsort(t_all, kind="stable")
    cols = {name: np.concatenate([getattr(t, name) for t in tables])[order] for name in NUMERIC_FIELDS}
    return MessageTable(codes=codes[order], names=names, **cols)
