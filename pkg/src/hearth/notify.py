"""Alert delivery through pluggable sinks, deduplicated per (home, kind).

The first alert of a (home, kind) inside the dedup window goes to every
enabled sink; the rest are suppressed.  An intruder burst is one incident:
dedup keys on (home, kind), never on message text.  Every raise, delivered
or suppressed, is also appended to the telemetry log on the reserved
diagnostics pin stream so no alert record is ever lost.

Email and push sinks are stubs with a real interface: email writes an
RFC-5322-shaped file into an outbox directory, push writes to the log.
Actual SMTP / mobile push transport is out of scope.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .telemetry import Sample, TelemetryStore

logger = logging.getLogger(__name__)

DIAGNOSTICS_PIN = 126
DEFAULT_WINDOW_S = 60

ALERT_KINDS = ("motion", "fire", "gas", "device_offline", "custom")
MAX_MESSAGE_BYTES = 1024


class RegisterError(Exception):
    """Duplicate (sink kind, destination) registration."""


@dataclass(frozen=True)
class Alert:
    kind: str
    home_id: str
    message: str
    t_ms: int

    def __post_init__(self):
        if self.kind not in ALERT_KINDS:
            raise ValueError(f"unknown alert kind {self.kind!r}")
        if len(self.message.encode("utf-8")) > MAX_MESSAGE_BYTES:
            raise ValueError(f"message exceeds {MAX_MESSAGE_BYTES} bytes")


@dataclass(frozen=True)
class SinkBinding:
    kind: str  # email | push | inmemory
    destination: str
    enabled: bool = True


@dataclass(frozen=True)
class Receipt:
    sink_kind: str
    destination: str
    ok: bool
    detail: str = ""


@dataclass(frozen=True)
class Delivered:
    receipts: tuple[Receipt, ...]


@dataclass(frozen=True)
class Suppressed:
    window_remaining_ms: int


class InMemorySink:
    """Test sink: keeps delivered alerts in a list."""

    def __init__(self):
        self.alerts: list[Alert] = []

    def deliver(self, alert: Alert) -> None:
        self.alerts.append(alert)


class EmailSink:
    """Stub SMTP: one RFC-5322-shaped file per delivery in the outbox.

    File path is the normative outbox/<home>/<t_ms>-<kind>.txt layout.
    """

    def __init__(self, outbox_dir: str | Path):
        self.outbox_dir = Path(outbox_dir)

    def deliver(self, alert: Alert, destination: str) -> None:
        home_dir = self.outbox_dir / alert.home_id
        home_dir.mkdir(parents=True, exist_ok=True)
        path = home_dir / f"{alert.t_ms}-{alert.kind}.txt"
        body = (f"From: hearth-gateway <gateway@localhost>\r\n"
                f"To: {destination}\r\n"
                f"Subject: [{alert.home_id}] {alert.kind} alert\r\n"
                f"X-Alert-Kind: {alert.kind}\r\n"
                f"X-Alert-Time-Ms: {alert.t_ms}\r\n"
                f"\r\n"
                f"{alert.message}\r\n")
        path.write_text(body, encoding="utf-8")


class PushSink:
    """Stub mobile push: logs the notification payload."""

    def deliver(self, alert: Alert, destination: str) -> None:
        logger.info("push -> %s: [%s/%s] %s", destination, alert.home_id,
                    alert.kind, alert.message)


class Notifier:
    """Thread-safe alert facade with windowed dedup per (home, kind)."""

    def __init__(self, outbox_dir: str | Path, window_s: int = DEFAULT_WINDOW_S,
                 telemetry: TelemetryStore | None = None):
        self.window_ms = window_s * 1000
        self.telemetry = telemetry
        self._email = EmailSink(outbox_dir)
        self._push = PushSink()
        self._inmemory: dict[str, InMemorySink] = {}
        self._sinks: list[SinkBinding] = []
        self._last_delivery: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    def register_sink(self, binding: SinkBinding) -> None:
        if binding.kind not in ("email", "push", "inmemory"):
            raise RegisterError(f"unknown sink kind {binding.kind!r}")
        if not binding.destination:
            raise RegisterError("sink destination must be nonempty")
        with self._lock:
            if any(b.kind == binding.kind and b.destination == binding.destination
                   for b in self._sinks):
                raise RegisterError(
                    f"sink ({binding.kind}, {binding.destination}) already registered")
            self._sinks.append(binding)
            if binding.kind == "inmemory":
                self._inmemory[binding.destination] = InMemorySink()

    def inmemory_sink(self, destination: str) -> InMemorySink:
        return self._inmemory[destination]

    def raise_alert(self, alert: Alert, now_ms: int) -> Delivered | Suppressed:
        """Deliver or suppress; never throws, records every raise."""
        with self._lock:
            key = (alert.home_id, alert.kind)
            last = self._last_delivery.get(key)
            if last is not None and now_ms - last < self.window_ms:
                result: Delivered | Suppressed = Suppressed(
                    self.window_ms - (now_ms - last))
            else:
                receipts = []
                for binding in self._sinks:
                    if not binding.enabled:
                        continue
                    receipts.append(self._deliver_one(binding, alert))
                self._last_delivery[key] = now_ms
                result = Delivered(tuple(receipts))
        self._record(alert, delivered=isinstance(result, Delivered))
        return result

    def _deliver_one(self, binding: SinkBinding, alert: Alert) -> Receipt:
        try:
            if binding.kind == "email":
                self._email.deliver(alert, binding.destination)
            elif binding.kind == "push":
                self._push.deliver(alert, binding.destination)
            else:
                self._inmemory[binding.destination].deliver(alert)
            return Receipt(binding.kind, binding.destination, True)
        except Exception as e:  # sink failure never propagates
            logger.error("sink (%s, %s) failed: %s", binding.kind,
                         binding.destination, e)
            return Receipt(binding.kind, binding.destination, False, str(e))

    def _record(self, alert: Alert, delivered: bool) -> None:
        if self.telemetry is None:
            return
        status = "delivered" if delivered else "suppressed"
        message = " ".join(alert.message.split())
        try:
            self.telemetry.append(Sample(alert.t_ms, alert.home_id, "notifier",
                                         DIAGNOSTICS_PIN,
                                         f"{alert.kind} {status} {message}"))
        except Exception as e:
            logger.error("alert record append failed: %s", e)
