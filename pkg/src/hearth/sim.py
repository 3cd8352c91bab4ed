"""Deterministic simulators for the three node types: a GPS tracker, an
environment node (temperature / humidity / motion / tank level) and the
master relay node that drives the appliances.

Nodes speak the real wire protocol through an injected uplink, so the
in-process demo harness and the socket-mode runner exercise identical node
code.  All randomness and timing derive from (seed, device_id) and the
shared clock: the same seed, profiles, outage script and duration always
produce a byte-identical sent-frame transcript.

The relay node carries a compiled copy of the deployment's vital rules.
While its uplink is up those are suppressed (the server is authoritative);
while down it keeps regulating the tank and the alarm against the latest
readings on the local peer bus, which the environment node refreshes every
tick whether or not its own uplink is up.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Protocol

from . import rules as rules_mod
from .model import MODE_PIN, MODE_MANUAL, mode_from_value
from .proto import Frame, MessageKind, encode_body, encode_frame, decode_body
from .rules import AlertRaise, PinWrite, Rule, RulesState

logger = logging.getLogger(__name__)

STEP_MS = 1000


class VirtualClock:
    """Strictly monotonic simulation clock, 1000 ms per step by default."""

    def __init__(self, start_ms: int = 0, step_ms: int = STEP_MS):
        self.now_ms = start_ms
        self.step_ms = step_ms

    def advance(self) -> int:
        self.now_ms += self.step_ms
        return self.now_ms

    def __call__(self) -> int:
        return self.now_ms


@dataclass
class TankModel:
    """Water tank integrated by forward Euler at the tick rate.

    The pump fills at fill_rate %/s while household consumption drains at
    drain_rate %/s; level is clamped to [0, 100].  The ultrasonic sensor
    at sensor_height_cm reads distance to the surface.
    """

    level: float = 50.0
    fill_rate: float = 2.0
    drain_rate: float = 0.5
    sensor_height_cm: float = 200.0
    pump_on: bool = False

    def advance(self, dt_s: float) -> None:
        rate = (self.fill_rate if self.pump_on else 0.0) - self.drain_rate
        self.level = min(100.0, max(0.0, self.level + rate * dt_s))

    @property
    def distance_cm(self) -> float:
        return self.sensor_height_cm * (1.0 - self.level / 100.0)


@dataclass
class EnvModel:
    """Diurnal temperature/humidity with seeded noise, clamped to the
    instrument ranges, plus Bernoulli motion events."""

    temp_base: float = 22.0
    temp_amplitude: float = 5.0
    temp_noise: float = 0.2
    hum_base: float = 55.0
    hum_amplitude: float = 15.0
    hum_noise: float = 0.2
    motion_p: float = 0.01

    def temperature(self, t_s: float, rng: random.Random) -> float:
        v = (self.temp_base
             + self.temp_amplitude * math.sin(2 * math.pi * t_s / 86400.0)
             + rng.gauss(0.0, self.temp_noise))
        return min(50.0, max(0.0, v))

    def humidity(self, t_s: float, rng: random.Random) -> float:
        v = (self.hum_base
             + self.hum_amplitude * math.sin(2 * math.pi * t_s / 86400.0)
             + rng.gauss(0.0, self.hum_noise))
        return min(90.0, max(20.0, v))

    def motion(self, rng: random.Random) -> bool:
        return rng.random() < self.motion_p


@dataclass
class RouteModel:
    """Closed loop over waypoints, constant speed per segment."""

    waypoints: list[tuple[float, float]]
    period_s: float = 600.0

    def position(self, t_s: float) -> tuple[float, float]:
        n = len(self.waypoints)
        if n == 1:
            return self.waypoints[0]
        u = (t_s % self.period_s) / self.period_s
        seg = min(int(u * n), n - 1)
        frac = u * n - seg
        lat0, lon0 = self.waypoints[seg]
        lat1, lon1 = self.waypoints[(seg + 1) % n]
        return lat0 + (lat1 - lat0) * frac, lon0 + (lon1 - lon0) * frac


DEFAULT_ROUTE = [
    (27.7172, 85.3240),
    (27.7200, 85.3290),
    (27.7260, 85.3255),
    (27.7240, 85.3180),
]


class World:
    """Shared physical state: the one tank both nodes touch, and the local
    peer bus over which the env node shares readings with the relay node."""

    def __init__(self, tank: TankModel | None = None):
        self.tank = tank if tank is not None else TankModel()
        self.peer_bus: dict[int, str] = {}

    def advance(self, dt_s: float) -> None:
        self.tank.advance(dt_s)


class Uplink(Protocol):
    """Node-side handle on one connection attempt; dies on server close."""

    live: bool

    def send(self, frame: Frame) -> None: ...


@dataclass(frozen=True)
class Outage:
    start_s: int
    duration_s: int

    @property
    def end_s(self) -> int:
        return self.start_s + self.duration_s


def parse_outage_script(text: str) -> list[Outage]:
    """Parse `down <t_s> <duration_s>` lines; '#' starts a comment."""
    outages = []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] != "down":
            raise ValueError(f"outage script line {ln}: expected 'down <t> <dur>'")
        outages.append(Outage(int(parts[1]), int(parts[2])))
    return outages


class SimNode:
    """Common node machinery: link state, reconnect sequence, transcript."""

    kind = "base"

    def __init__(self, device_id: str, token: str, seed: int):
        self.device_id = device_id
        self.token = token
        self.rng = random.Random(f"{seed}:{device_id}")
        self.link_up = True
        self.uplink: Uplink | None = None
        self.mode = MODE_MANUAL
        self.local_pins: dict[int, str] = {}
        self._msg_ids = itertools.cycle(range(1, 0x10000))
        self._acks_pending: set[int] = set()
        self._greeted_uplink: Uplink | None = None
        self._now_ms = 0
        self.frames_sent = 0
        self.frames_received = 0
        self._sent_digest = hashlib.sha256()

    # -- link lifecycle -------------------------------------------------

    def set_link(self, up: bool, now_ms: int) -> None:
        """Up-transitions force a fresh session; down is a silent stop."""
        if up == self.link_up:
            return
        self.link_up = up
        if not up:
            self.uplink = None  # radio gone; no farewell frame
            self._acks_pending.clear()

    def attach_uplink(self, uplink: Uplink) -> None:
        self.uplink = uplink

    def needs_connect(self) -> bool:
        return self.link_up and (self.uplink is None or not self.uplink.live)

    # -- per-tick behaviour ----------------------------------------------

    def step(self, now_ms: int) -> list[Frame]:
        """One 1 Hz tick: sample, and when the link is up, transmit.

        Returns the frames sent this tick (empty when the link is down).
        The runner must have attached a fresh uplink beforehand if
        needs_connect() was true.
        """
        self._now_ms = now_ms
        self.sample(now_ms)
        frames: list[Frame] = []
        if not self.link_up or self.uplink is None or not self.uplink.live:
            self.offline_step(now_ms)
            return frames
        if self._greeted_uplink is not self.uplink:
            frames.append(self._login_frame())
            frames.append(Frame(MessageKind.HW_SYNC, self._next_id()))
            self._greeted_uplink = self.uplink
        else:
            frames.append(self._ping_frame())
        frames.extend(self.report_frames(now_ms))
        for frame in frames:
            self._transmit(frame)
        return frames

    def sample(self, now_ms: int) -> None:
        """Read instruments; runs every tick whether or not the link is up."""

    def report_frames(self, now_ms: int) -> list[Frame]:
        return []

    def offline_step(self, now_ms: int) -> None:
        """Local behaviour while disconnected (relay fallback)."""

    # -- inbound ----------------------------------------------------------

    def on_inbound(self, frame: Frame) -> None:
        if not self.link_up:
            return  # radio is off; the server cannot reach us
        self.frames_received += 1
        if frame.kind == MessageKind.RESPONSE:
            self._acks_pending.discard(frame.msg_id)
        elif frame.kind == MessageKind.HW_WRITE:
            fields = decode_body(frame.body)
            if len(fields) == 3 and fields[0] == "vw" and fields[1].isdigit():
                self.apply_write(int(fields[1]), fields[2])

    def apply_write(self, pin: int, value: str) -> None:
        if pin == MODE_PIN:
            self.mode = mode_from_value(value)
        else:
            logger.debug("%s: ignoring write to unowned pin %d",
                         self.device_id, pin)

    # -- helpers ----------------------------------------------------------

    def _next_id(self) -> int:
        return next(self._msg_ids)

    def _login_frame(self) -> Frame:
        msg_id = self._next_id()
        self._acks_pending.add(msg_id)
        return Frame(MessageKind.LOGIN, msg_id, self.token.encode())

    def _ping_frame(self) -> Frame:
        msg_id = self._next_id()
        self._acks_pending.add(msg_id)
        return Frame(MessageKind.PING, msg_id)

    def _write_frame(self, pin: int, value: str) -> Frame:
        return Frame(MessageKind.HW_WRITE, self._next_id(),
                     encode_body(["vw", str(pin), value]))

    def _transmit(self, frame: Frame) -> None:
        self.frames_sent += 1
        self._sent_digest.update(encode_frame(frame))
        self.uplink.send(frame)

    def transcript_summary(self) -> dict:
        return {"device": self.device_id, "sent": self.frames_sent,
                "digest": self._sent_digest.hexdigest()[:16]}


class EnvNode(SimNode):
    """Perception node: temperature, humidity, motion, tank level."""

    kind = "env"

    def __init__(self, device_id: str, token: str, seed: int, world: World,
                 env: EnvModel | None = None,
                 pins: tuple[int, int, int, int] = (1, 2, 3, 4)):
        super().__init__(device_id, token, seed)
        self.world = world
        self.env = env if env is not None else EnvModel()
        self.pin_temp, self.pin_hum, self.pin_motion, self.pin_level = pins
        self._readings: dict[int, str] = {}

    def sample(self, now_ms: int) -> None:
        t_s = now_ms / 1000.0
        self._readings = {
            self.pin_temp: repr(self.env.temperature(t_s, self.rng)),
            self.pin_hum: repr(self.env.humidity(t_s, self.rng)),
            self.pin_motion: "1" if self.env.motion(self.rng) else "0",
            self.pin_level: repr(self.world.tank.level),
        }
        self.world.peer_bus.update(self._readings)

    def report_frames(self, now_ms: int) -> list[Frame]:
        return [self._write_frame(pin, self._readings[pin])
                for pin in sorted(self._readings)]


class GpsNode(SimNode):
    """Vehicle tracker following a looped route."""

    kind = "gps"

    def __init__(self, device_id: str, token: str, seed: int,
                 route: RouteModel | None = None,
                 pins: tuple[int, int] = (10, 11)):
        super().__init__(device_id, token, seed)
        self.route = route if route is not None else RouteModel(list(DEFAULT_ROUTE))
        self.pin_lat, self.pin_lon = pins
        self._position = self.route.position(0.0)

    def sample(self, now_ms: int) -> None:
        self._position = self.route.position(now_ms / 1000.0)

    def report_frames(self, now_ms: int) -> list[Frame]:
        lat, lon = self._position
        return [self._write_frame(self.pin_lat, repr(lat)),
                self._write_frame(self.pin_lon, repr(lon))]


class RelayNode(SimNode):
    """Master node driving the appliance relays, with offline fallback.

    Carries a verbatim copy of the deployment's vital rules.  While
    connected they stay suppressed and every server write keeps the local
    latch copy aligned; while disconnected they run against the peer bus
    so the pump and alarm keep working.
    """

    kind = "relay"

    def __init__(self, device_id: str, token: str, seed: int, world: World,
                 fallback_rules: list[Rule],
                 actuator_pins: tuple[int, ...] = (20, 21, 22, 23),
                 pump_pin: int = 20):
        super().__init__(device_id, token, seed)
        self.world = world
        self.fallback_rules = sorted(fallback_rules, key=lambda r: r.rule_id)
        self.fallback_state = RulesState()
        self.actuator_pins = set(actuator_pins)
        self.pump_pin = pump_pin
        self.local_pins = {p: "0" for p in sorted(actuator_pins)}
        self._fallback_inputs = sorted({r.input_pin for r in self.fallback_rules})

    def apply_write(self, pin: int, value: str) -> None:
        if pin == MODE_PIN:
            self.mode = mode_from_value(value)
            return
        if pin not in self.actuator_pins:
            logger.debug("%s: ignoring write to unowned pin %d",
                         self.device_id, pin)
            return
        self._actuate(pin, value)
        rules_mod.sync_latch(self.fallback_rules, self.fallback_state, pin,
                             value, self._now_ms)

    def _actuate(self, pin: int, value: str) -> None:
        self.local_pins[pin] = value
        if pin == self.pump_pin:
            self.world.tank.pump_on = value == "1"

    def offline_step(self, now_ms: int) -> None:
        """Run the vital rules locally against the freshest peer readings."""
        for pin in self._fallback_inputs:
            value = self.world.peer_bus.get(pin)
            if value is None:
                continue
            actions = rules_mod.evaluate(self.fallback_rules, self.fallback_state,
                                         self.mode, pin, value, now_ms)
            self._apply_local(actions)
        self._apply_local(
            rules_mod.tick(self.fallback_rules, self.fallback_state, now_ms))

    def _apply_local(self, actions) -> None:
        for action in actions:
            if isinstance(action, PinWrite):
                self._actuate(action.pin, action.value)
            elif isinstance(action, AlertRaise):
                logger.debug("%s offline: alert %s dropped (no uplink)",
                             self.device_id, action.kind)


@dataclass
class SimParams:
    """Sensor-model knobs; the spec-level defaults live on the models."""

    seed: int = 7
    tank: TankModel = field(default_factory=TankModel)
    env: EnvModel = field(default_factory=EnvModel)
    route: RouteModel = field(
        default_factory=lambda: RouteModel(list(DEFAULT_ROUTE)))


def build_nodes(home_cfg, params: SimParams, world: World | None = None):
    """Instantiate the three standard nodes from a HomeConfig's device map.

    Returns (nodes_by_id, world).  Node kinds are recognized by their
    declared pins: all-sensor 4-pin -> env, all-sensor 2-pin -> gps,
    all-actuator -> relay.
    """
    if world is None:
        world = World(params.tank)
    nodes = {}
    for device_id in sorted(home_cfg.devices):
        dev = home_cfg.devices[device_id]
        sensors, actuators = dev.sensor_pins(), dev.actuator_pins()
        if actuators and not sensors:
            fallback = [r for r in rules_mod.vital_rules(home_cfg.rules)
                        if rules_mod.output_pin(r) in set(actuators)]
            nodes[device_id] = RelayNode(device_id, dev.auth_token, params.seed,
                                         world, fallback,
                                         tuple(actuators), actuators[0])
        elif len(sensors) == 4:
            nodes[device_id] = EnvNode(device_id, dev.auth_token, params.seed,
                                       world, params.env, tuple(sensors))
        elif len(sensors) == 2:
            nodes[device_id] = GpsNode(device_id, dev.auth_token, params.seed,
                                       params.route, tuple(sensors))
        else:
            raise ValueError(f"no simulator profile matches device {device_id}")
    return nodes, world
