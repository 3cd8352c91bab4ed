"""Gateway core: routes device frames and app commands through the home
model, rules engine, telemetry log and notifier, and fans state changes
out to every attached app session.

The core is transport-agnostic and synchronous.  Transports (the asyncio
TCP/HTTP servers, or the in-process demo harness) hand it decoded frames
and receive frames/events back through small sink interfaces; all state
transitions of one home happen inside these synchronous calls, so running
them on one event loop (or one coordinator thread) serializes each home.

Pipeline order per accepted write: apply -> log -> rules -> fanout; a
fanned-out event is always already durable in the telemetry log.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Protocol

from . import proto, rules as rules_mod
from .config import DeploymentConfig, HomeConfig
from .model import (
    MODE_PIN,
    SOURCE_AUTO,
    SOURCE_DEVICE,
    SOURCE_MANUAL,
    ChangeEvent,
    HomeState,
    WriteRejected,
)
from .notify import Alert, Delivered, Notifier
from .proto import Frame, MessageKind
from .rules import AlertRaise, PinWrite, RulesState
from .telemetry import Sample, TelemetryStore

logger = logging.getLogger(__name__)

GATEWAY_DEVICE_ID = "gateway"


class ModeConflict(Exception):
    """Manual write to a comfort-rule actuator while the home is in auto."""


class DeviceTransport(Protocol):
    def send_frame(self, frame: Frame) -> None: ...
    def close(self) -> None: ...


class AppSink(Protocol):
    def send(self, event: dict) -> bool:
        """Deliver one event; False means the session buffer overflowed."""
        ...

    def close(self) -> None: ...


@dataclass
class DeviceSession:
    transport: DeviceTransport
    authenticated: bool = False
    home_id: str | None = None
    device_id: str | None = None
    last_heartbeat_ms: int = 0
    _msg_ids: itertools.cycle = field(
        default_factory=lambda: itertools.cycle(range(1, 0x10000)), repr=False)

    def next_msg_id(self) -> int:
        return next(self._msg_ids)


@dataclass
class AppSession:
    session_id: int
    home_id: str
    sink: AppSink


class _HomeRuntime:
    def __init__(self, cfg: HomeConfig, t0_ms: int):
        self.cfg = cfg
        self.state = HomeState(cfg.home_id, cfg.devices, cfg.mode, t0_ms)
        self.rules = sorted(cfg.rules, key=lambda r: r.rule_id)
        self.rules_by_input: dict[int, list] = {}
        self.comfort_outputs: set[int] = set()
        for rule in self.rules:
            self.rules_by_input.setdefault(rule.input_pin, []).append(rule)
            if rule.klass == rules_mod.CLASS_COMFORT:
                self.comfort_outputs.add(rules_mod.output_pin(rule))
        self.rules_state = RulesState()
        self.app_sessions: list[AppSession] = []
        self.alerts: deque[dict] = deque(maxlen=256)
        self.seq = 0


class Gateway:
    """One deployment's gateway.  `clock` returns milliseconds since epoch."""

    def __init__(self, config: DeploymentConfig, telemetry: TelemetryStore,
                 notifier: Notifier, clock: Callable[[], int]):
        self.config = config
        self.telemetry = telemetry
        self.notifier = notifier
        self.clock = clock
        t0 = clock()
        self.homes = {hid: _HomeRuntime(hc, t0) for hid, hc in config.homes.items()}
        self._token_index = config.device_token_index()
        self._device_sessions: dict[str, DeviceSession] = {}
        self._sessions: list[DeviceSession] = []
        self._app_ids = itertools.count(1)

    # ------------------------------------------------------------------
    # Device plane
    # ------------------------------------------------------------------

    def device_connected(self, transport: DeviceTransport) -> DeviceSession:
        session = DeviceSession(transport, last_heartbeat_ms=self.clock())
        self._sessions.append(session)
        return session

    def device_disconnected(self, session: DeviceSession) -> None:
        """Transport saw EOF/reset.  Eviction and timeout do not come here."""
        if session not in self._sessions:
            return
        self._drop_session(session)
        if session.device_id and \
                self._device_sessions.get(session.device_id) is None:
            self._raise_offline(session, self.clock())

    def _drop_session(self, session: DeviceSession) -> None:
        if session in self._sessions:
            self._sessions.remove(session)
        if session.device_id and \
                self._device_sessions.get(session.device_id) is session:
            del self._device_sessions[session.device_id]

    def device_online(self, device_id: str) -> bool:
        return device_id in self._device_sessions

    def on_device_frame(self, session: DeviceSession, frame: Frame) -> None:
        """Handle one decoded frame from a device connection."""
        if frame.kind == MessageKind.LOGIN:
            self._handle_login(session, frame)
            return
        if not session.authenticated:
            self._respond(session, frame.msg_id, proto.STATUS_ILLEGAL_COMMAND)
            self._drop_session(session)
            session.transport.close()
            return
        session.last_heartbeat_ms = self.clock()
        if frame.kind == MessageKind.PING:
            self._respond(session, frame.msg_id, proto.STATUS_OK)
        elif frame.kind == MessageKind.HW_WRITE:
            self._handle_hw_write(session, frame)
        elif frame.kind == MessageKind.HW_SYNC:
            self._handle_hw_sync(session)
        elif frame.kind == MessageKind.NOTIFY:
            message = " ".join(proto.decode_body(frame.body)) or "device notification"
            self.raise_alert(session.home_id, "custom", message)
        elif frame.kind == MessageKind.RESPONSE:
            pass  # devices do not owe us acks; tolerate them
        else:
            self._respond(session, frame.msg_id, proto.STATUS_ILLEGAL_COMMAND)

    def _handle_login(self, session: DeviceSession, frame: Frame) -> None:
        token = frame.body.decode("utf-8", errors="replace")
        entry = self._token_index.get(token)
        if entry is None:
            self._respond(session, frame.msg_id, proto.STATUS_INVALID_TOKEN)
            self._drop_session(session)
            session.transport.close()
            return
        home_id, device_id = entry
        old = self._device_sessions.get(device_id)
        if old is not None and old is not session:
            self._drop_session(old)
            old.transport.close()
        session.authenticated = True
        session.home_id = home_id
        session.device_id = device_id
        session.last_heartbeat_ms = self.clock()
        self._device_sessions[device_id] = session
        self._respond(session, frame.msg_id, proto.STATUS_OK)

    def _handle_hw_write(self, session: DeviceSession, frame: Frame) -> None:
        try:
            fields = proto.decode_body(frame.body)
        except proto.ProtocolError:
            self._respond(session, frame.msg_id, proto.STATUS_ILLEGAL_COMMAND)
            return
        if len(fields) != 3 or fields[0] != "vw" or not fields[1].isdigit():
            self._respond(session, frame.msg_id, proto.STATUS_ILLEGAL_COMMAND)
            return
        pin, value = int(fields[1]), fields[2]
        try:
            self._ingest(session.home_id, session.device_id, pin, value,
                         SOURCE_DEVICE)
        except WriteRejected as e:
            logger.info("device write rejected (%s): %s/%s pin %d",
                        e.reason, session.home_id, session.device_id, pin)
            self._respond(session, frame.msg_id, proto.STATUS_ILLEGAL_COMMAND)

    def _handle_hw_sync(self, session: DeviceSession) -> None:
        """Replay authoritative state: the device's actuator pins, then mode.

        Sensor pins are not replayed; the device re-reports those itself.
        """
        home = self.homes[session.home_id]
        device = home.cfg.devices[session.device_id]
        snapshot = home.state.snapshot()
        for pin in device.actuator_pins():
            st = snapshot.get(pin)
            if st is not None:
                self._send_pin(session, pin, st.value)
        self._send_pin(session, MODE_PIN, snapshot[MODE_PIN].value)

    # ------------------------------------------------------------------
    # App plane
    # ------------------------------------------------------------------

    def attach_app(self, home_id: str, sink: AppSink) -> AppSession:
        home = self.homes[home_id]
        session = AppSession(next(self._app_ids), home_id, sink)
        home.app_sessions.append(session)
        return session

    def detach_app(self, session: AppSession) -> None:
        home = self.homes.get(session.home_id)
        if home and session in home.app_sessions:
            home.app_sessions.remove(session)

    def app_token_valid(self, home_id: str, token: str) -> bool:
        home = self.config.homes.get(home_id)
        return home is not None and token in home.app_tokens

    def app_pin_write(self, home_id: str, pin: int, value: str) -> ChangeEvent:
        """Manual write from a person.  Raises ModeConflict or WriteRejected."""
        home = self.homes[home_id]
        if home.state.mode == "auto" and pin in home.comfort_outputs:
            raise ModeConflict(
                f"pin {pin} is driven by a comfort rule while mode is auto")
        owner = home.state.pin_owner(pin)
        events = self._ingest(home_id, owner or GATEWAY_DEVICE_ID, pin, value,
                              SOURCE_MANUAL)
        return events[0]

    def app_set_mode(self, home_id: str, mode: str) -> ChangeEvent | None:
        home = self.homes[home_id]
        now = self.clock()
        ev = home.state.set_mode(mode, now)
        if ev is None:
            return None
        self.telemetry.append(Sample(ev.t_ms, home_id, GATEWAY_DEVICE_ID,
                                     MODE_PIN, ev.new))
        for device_id in sorted(home.cfg.devices):
            session = self._device_sessions.get(device_id)
            if session is not None:
                self._send_pin(session, MODE_PIN, ev.new)
        self._fanout(home, [self._change_event_dict(home, ev)])
        return ev

    def history(self, home_id: str, pin: int, t0: int, t1: int,
                bucket_ms: int | None = None):
        if bucket_ms is None:
            return self.telemetry.query_range(home_id, pin, t0, t1)
        return self.telemetry.downsample(home_id, pin, t0, t1, bucket_ms)

    def recent_alerts(self, home_id: str) -> list[dict]:
        return list(self.homes[home_id].alerts)

    def home_state(self, home_id: str) -> dict:
        home = self.homes[home_id]
        snapshot = home.state.snapshot()
        return {
            "home_id": home_id,
            "mode": home.state.mode,
            "pins": {str(p): {"value": st.value, "updated_at": st.updated_at,
                              "source": st.source}
                     for p, st in sorted(snapshot.items())},
            "devices": {
                d.device_id: {
                    "online": self.device_online(d.device_id),
                    "pins": {str(p): dirn for p, dirn in sorted(d.pins.items())},
                }
                for d in home.cfg.devices.values()
            },
        }

    # ------------------------------------------------------------------
    # Periodic work
    # ------------------------------------------------------------------

    def heartbeat_sweep(self, now_ms: int) -> list[Alert]:
        """Close sessions that went silent; raise device_offline once each."""
        raised = []
        timeout = self.config.heartbeat_timeout_ms
        for session in sorted(list(self._sessions),
                              key=lambda s: s.device_id or ""):
            if now_ms - session.last_heartbeat_ms > timeout:
                self._drop_session(session)
                session.transport.close()
                if session.device_id:
                    raised.append(self._raise_offline(session, now_ms))
        return raised

    def rules_tick(self, now_ms: int) -> None:
        """Expire alarm holds across all homes."""
        for home_id in sorted(self.homes):
            home = self.homes[home_id]
            actions = rules_mod.tick(home.rules, home.rules_state, now_ms)
            if actions:
                events = self._apply_actions(home, actions)
                self._fanout(home, events)

    def sweep(self, now_ms: int) -> None:
        """One 1 Hz maintenance pass: heartbeats, then alarm expiries."""
        self.heartbeat_sweep(now_ms)
        self.rules_tick(now_ms)

    # ------------------------------------------------------------------
    # Shared pipeline
    # ------------------------------------------------------------------

    def _ingest(self, home_id: str, device_id: str, pin: int, value: str,
                source: str) -> list[dict]:
        """apply -> log -> rules -> fanout for one write; returns fanout events.

        The write timestamp is the gateway clock, clamped to the pin's
        current timestamp so device clock skew can never make the store
        reject an accepted write.
        """
        home = self.homes[home_id]
        now = self.clock()
        current = home.state.pins.get(pin)
        t = max(now, current.updated_at) if current else now
        ev = home.state.apply_pin_write(pin, value, source, t,
                                        device_id if source == SOURCE_DEVICE else None)
        self.telemetry.append(Sample(ev.t_ms, home_id, device_id, pin, value))
        events = [self._change_event_dict(home, ev)]
        if source == SOURCE_DEVICE:
            for_pin = home.rules_by_input.get(pin)
            if for_pin:
                actions = rules_mod.evaluate(for_pin, home.rules_state,
                                             home.state.mode, pin, value, t)
                events.extend(self._apply_actions(home, actions))
        self._fanout(home, events)
        return events

    def _apply_actions(self, home: _HomeRuntime, actions) -> list[dict]:
        events = []
        for action in actions:
            if isinstance(action, PinWrite):
                owner = home.state.pin_owner(action.pin)
                now = self.clock()
                current = home.state.pins.get(action.pin)
                t = max(now, current.updated_at) if current else now
                ev = home.state.apply_pin_write(action.pin, action.value,
                                                SOURCE_AUTO, t)
                self.telemetry.append(Sample(t, home.cfg.home_id, owner,
                                             action.pin, action.value))
                session = self._device_sessions.get(owner)
                if session is not None:
                    self._send_pin(session, action.pin, action.value)
                events.append(self._change_event_dict(home, ev))
            elif isinstance(action, AlertRaise):
                events.append(self._raise_and_record(
                    home, action.kind, action.message, self.clock()))
        return events

    def raise_alert(self, home_id: str, kind: str, message: str) -> dict:
        """Raise an alert outside the rules pipeline (NOTIFY frames, tests)."""
        home = self.homes[home_id]
        event = self._raise_and_record(home, kind, message, self.clock())
        self._fanout(home, [event])
        return event

    def _raise_offline(self, session: DeviceSession, now_ms: int) -> Alert:
        alert = Alert("device_offline", session.home_id,
                      f"device {session.device_id} stopped responding",
                      now_ms)
        home = self.homes[session.home_id]
        result = self.notifier.raise_alert(alert, now_ms)
        event = self._alert_event_dict(home, alert, result)
        self._fanout(home, [event])
        return alert

    def _raise_and_record(self, home: _HomeRuntime, kind: str, message: str,
                          now_ms: int) -> dict:
        alert = Alert(kind, home.cfg.home_id, message, now_ms)
        result = self.notifier.raise_alert(alert, now_ms)
        return self._alert_event_dict(home, alert, result)

    # ------------------------------------------------------------------
    # Fanout
    # ------------------------------------------------------------------

    def _change_event_dict(self, home: _HomeRuntime, ev: ChangeEvent) -> dict:
        return {"type": "change", "home": ev.home_id, "pin": ev.pin,
                "value": ev.new, "old": ev.old, "source": ev.source,
                "t_ms": ev.t_ms}

    def _alert_event_dict(self, home: _HomeRuntime, alert: Alert,
                          result) -> dict:
        event = {"type": "alert", "home": alert.home_id, "kind": alert.kind,
                 "message": alert.message, "t_ms": alert.t_ms,
                 "delivered": isinstance(result, Delivered)}
        home.alerts.append(event)
        return event

    def _fanout(self, home: _HomeRuntime, events: list[dict]) -> None:
        """Deliver each event to every app session, in order, exactly once.

        A session whose buffer overflows is disconnected rather than
        allowed to block the home.
        """
        if not home.app_sessions or not events:
            return
        dead = []
        for event in events:
            home.seq += 1
            numbered = dict(event, seq=home.seq)
            for session in home.app_sessions:
                if session not in dead and not session.sink.send(numbered):
                    dead.append(session)
        for session in dead:
            logger.warning("app session %d too slow, disconnecting",
                           session.session_id)
            home.app_sessions.remove(session)
            session.sink.close()

    # ------------------------------------------------------------------
    # Frame helpers
    # ------------------------------------------------------------------

    def _respond(self, session: DeviceSession, msg_id: int, status: str) -> None:
        msg_id = msg_id or session.next_msg_id()
        session.transport.send_frame(
            Frame(MessageKind.RESPONSE, msg_id, status.encode()))

    def _send_pin(self, session: DeviceSession, pin: int, value: str) -> None:
        body = proto.encode_body(["vw", str(pin), value])
        session.transport.send_frame(
            Frame(MessageKind.HW_WRITE, session.next_msg_id(), body))
