"""Authoritative in-memory state of one home.

Virtual pins 0-126 carry device sensor readings and actuator states as
strings; pin 127 is reserved for the operating mode ("0" manual, "1" auto)
so devices learn mode changes through the ordinary pin channel.  All
mutations of one home must be serialized by the caller (the gateway runs
them on a single event loop); readers get snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

MODE_PIN = 127
MAX_PIN = 127
MAX_VALUE_BYTES = 256

MODE_MANUAL = "manual"
MODE_AUTO = "auto"

SOURCE_DEVICE = "device"
SOURCE_MANUAL = "manual"
SOURCE_AUTO = "auto"
_SOURCES = (SOURCE_DEVICE, SOURCE_MANUAL, SOURCE_AUTO)

DIR_SENSOR = "sensor"
DIR_ACTUATOR = "actuator"

# Rejection reason codes, surfaced verbatim by the gateway API
REJECT_UNDECLARED = "undeclared_pin"
REJECT_DIRECTION = "direction"
REJECT_STALE = "stale"
REJECT_VALUE = "value_too_long"


class WriteRejected(Exception):
    """A pin write that the home refuses; .reason is machine-readable."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


@dataclass(frozen=True)
class PinState:
    value: str
    updated_at: int  # ms since epoch, non-decreasing per pin
    source: str  # device | manual | auto


@dataclass(frozen=True)
class ChangeEvent:
    """One accepted state change, the unit of logging and fanout."""

    home_id: str
    pin: int
    old: str | None
    new: str
    source: str
    t_ms: int


@dataclass(frozen=True)
class DeviceSpec:
    """One declared device (sub-system) with its pin map."""

    device_id: str
    auth_token: str  # 32-char lowercase hex
    pins: dict[int, str] = field(default_factory=dict)  # pin -> direction

    def sensor_pins(self) -> list[int]:
        return sorted(p for p, d in self.pins.items() if d == DIR_SENSOR)

    def actuator_pins(self) -> list[int]:
        return sorted(p for p, d in self.pins.items() if d == DIR_ACTUATOR)


class HomeState:
    """Pins, devices and operating mode of a single home."""

    def __init__(self, home_id: str, devices: dict[str, DeviceSpec],
                 mode: str = MODE_MANUAL, t0_ms: int = 0):
        self.home_id = home_id
        self.devices = dict(devices)
        self.mode = mode
        self._pin_owner: dict[int, str] = {}
        self._pin_dir: dict[int, str] = {}
        for dev in devices.values():
            for pin, direction in dev.pins.items():
                self._pin_owner[pin] = dev.device_id
                self._pin_dir[pin] = direction
        self.pins: dict[int, PinState] = {
            MODE_PIN: PinState(_mode_value(mode), t0_ms, SOURCE_MANUAL)
        }

    def pin_owner(self, pin: int) -> str | None:
        return self._pin_owner.get(pin)

    def pin_direction(self, pin: int) -> str | None:
        return self._pin_dir.get(pin)

    def apply_pin_write(self, pin: int, value: str, source: str, t_ms: int,
                        device_id: str | None = None) -> ChangeEvent:
        """Apply one write, returning the ChangeEvent for logging and fanout.

        Raises WriteRejected(undeclared_pin | direction | stale |
        value_too_long).  For source="device", the pin must be declared by
        that device; a manual/auto source may never target a sensor pin.
        Writes older than the pin's current timestamp are stale (equal
        timestamps win: last writer at the same instant).
        """
        if source not in _SOURCES:
            raise ValueError(f"unknown write source {source!r}")
        owner = self._pin_owner.get(pin)
        if owner is None:
            raise WriteRejected(REJECT_UNDECLARED, f"pin {pin} not declared")
        if source == SOURCE_DEVICE and device_id is not None and owner != device_id:
            raise WriteRejected(REJECT_UNDECLARED,
                                f"pin {pin} not declared by {device_id}")
        if source in (SOURCE_MANUAL, SOURCE_AUTO) and self._pin_dir[pin] == DIR_SENSOR:
            raise WriteRejected(REJECT_DIRECTION,
                                f"{source} write to sensor pin {pin}")
        if len(value.encode("utf-8")) > MAX_VALUE_BYTES:
            raise WriteRejected(REJECT_VALUE, f"value exceeds {MAX_VALUE_BYTES} bytes")
        current = self.pins.get(pin)
        if current is not None and t_ms < current.updated_at:
            raise WriteRejected(REJECT_STALE,
                                f"t={t_ms} before current {current.updated_at}")
        self.pins[pin] = PinState(value, t_ms, source)
        return ChangeEvent(self.home_id, pin, current.value if current else None,
                           value, source, t_ms)

    def set_mode(self, mode: str, t_ms: int) -> ChangeEvent | None:
        """Switch manual/auto; emits a pin-127 event, or None if unchanged."""
        if mode not in (MODE_MANUAL, MODE_AUTO):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == self.mode:
            return None
        old = self.pins[MODE_PIN]
        self.mode = mode
        self.pins[MODE_PIN] = PinState(_mode_value(mode), t_ms, SOURCE_MANUAL)
        return ChangeEvent(self.home_id, MODE_PIN, old.value, _mode_value(mode),
                           SOURCE_MANUAL, t_ms)

    def snapshot(self) -> dict[int, PinState]:
        """Point-in-time copy; later mutations do not alter the returned map."""
        return dict(self.pins)


def _mode_value(mode: str) -> str:
    return "1" if mode == MODE_AUTO else "0"


def mode_from_value(value: str) -> str:
    return MODE_AUTO if value == "1" else MODE_MANUAL
