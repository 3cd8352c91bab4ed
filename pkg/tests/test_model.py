"""Home state: write acceptance, direction/staleness rules, mode pin,
snapshot copy semantics, and event-sourcing replay equivalence."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from hearth.model import (
    MODE_PIN,
    DeviceSpec,
    HomeState,
    PinState,
    WriteRejected,
)


def make_home(mode="manual"):
    devices = {
        "env-node": DeviceSpec("env-node", "a" * 32,
                               {1: "sensor", 2: "sensor", 4: "sensor"}),
        "relay-node": DeviceSpec("relay-node", "b" * 32,
                                 {20: "actuator", 21: "actuator"}),
    }
    return HomeState("home-1", devices, mode)


class TestApplyPinWrite:
    def test_first_manual_write_accepted(self):
        home = make_home()
        ev = home.apply_pin_write(20, "1", "manual", 1000)
        assert ev.old is None and ev.new == "1" and ev.source == "manual"

    def test_manual_to_sensor_rejected(self):
        home = make_home()
        with pytest.raises(WriteRejected) as e:
            home.apply_pin_write(1, "21.0", "manual", 1000)
        assert e.value.reason == "direction"

    def test_auto_to_sensor_rejected(self):
        home = make_home()
        with pytest.raises(WriteRejected) as e:
            home.apply_pin_write(4, "50", "auto", 1000)
        assert e.value.reason == "direction"

    def test_device_write_to_own_sensor(self):
        home = make_home()
        ev = home.apply_pin_write(1, "21.5", "device", 1000, device_id="env-node")
        assert ev.new == "21.5"

    def test_device_write_to_other_devices_pin(self):
        home = make_home()
        with pytest.raises(WriteRejected) as e:
            home.apply_pin_write(20, "1", "device", 1000, device_id="env-node")
        assert e.value.reason == "undeclared_pin"

    def test_undeclared_pin(self):
        home = make_home()
        with pytest.raises(WriteRejected) as e:
            home.apply_pin_write(99, "1", "manual", 1000)
        assert e.value.reason == "undeclared_pin"

    def test_stale_write_rejected(self):
        home = make_home()
        home.apply_pin_write(20, "1", "manual", 2000)
        with pytest.raises(WriteRejected) as e:
            home.apply_pin_write(20, "0", "manual", 1500)
        assert e.value.reason == "stale"
        assert home.pins[20].value == "1"

    def test_equal_timestamp_accepted(self):
        home = make_home()
        home.apply_pin_write(20, "1", "manual", 2000)
        ev = home.apply_pin_write(20, "0", "manual", 2000)
        assert ev.new == "0"

    def test_mode_pin_not_directly_writable(self):
        home = make_home()
        with pytest.raises(WriteRejected):
            home.apply_pin_write(MODE_PIN, "1", "device", 1000,
                                 device_id="env-node")

    def test_value_size_cap(self):
        home = make_home()
        with pytest.raises(WriteRejected) as e:
            home.apply_pin_write(20, "x" * 257, "manual", 1000)
        assert e.value.reason == "value_too_long"


class TestSetMode:
    def test_manual_to_auto_emits_pin127(self):
        home = make_home("manual")
        ev = home.set_mode("auto", 5000)
        assert ev.pin == MODE_PIN and ev.new == "1"
        assert home.mode == "auto"

    def test_idempotent(self):
        home = make_home("auto")
        assert home.set_mode("auto", 5000) is None

    def test_flip_flop(self):
        home = make_home("manual")
        ev1 = home.set_mode("auto", 1000)
        ev2 = home.set_mode("manual", 2000)
        assert (ev1.new, ev2.new) == ("1", "0")
        assert home.mode == "manual"
        assert home.pins[MODE_PIN].value == "0"


class TestSnapshot:
    def test_fresh_home_has_only_mode_pin(self):
        assert set(make_home().snapshot()) == {MODE_PIN}

    def test_reflects_write(self):
        home = make_home()
        home.apply_pin_write(4, "153.2", "device", 1000, device_id="env-node")
        snap = home.snapshot()
        assert set(snap) == {4, MODE_PIN}
        assert snap[4].value == "153.2"

    def test_copy_semantics(self):
        home = make_home()
        snap = home.snapshot()
        home.apply_pin_write(20, "1", "manual", 1000)
        assert 20 not in snap


WRITE_PINS = [1, 2, 4, 20, 21]
SOURCES_FOR = {1: ["device"], 2: ["device"], 4: ["device"],
               20: ["device", "manual", "auto"],
               21: ["device", "manual", "auto"]}
OWNER = {1: "env-node", 2: "env-node", 4: "env-node",
         20: "relay-node", 21: "relay-node"}


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_replay_reproduces_snapshot(seed):
    """Event-sourcing equivalence on random accepted-write sequences."""
    rng = random.Random(seed)
    home = make_home()
    events = []
    t = 0
    for _ in range(60):
        pin = rng.choice(WRITE_PINS)
        source = rng.choice(SOURCES_FOR[pin])
        t += rng.choice([0, 1, 5])
        try:
            ev = home.apply_pin_write(pin, f"{rng.randint(0, 999)}", source, t,
                                      device_id=OWNER[pin]
                                      if source == "device" else None)
            events.append(ev)
        except WriteRejected:
            pass
        if rng.random() < 0.1:
            ev = home.set_mode(rng.choice(["manual", "auto"]), t)
            if ev is not None:
                events.append(ev)

    replay = make_home()
    for ev in events:
        if ev.pin == MODE_PIN:
            replay.set_mode("auto" if ev.new == "1" else "manual", ev.t_ms)
        else:
            replay.apply_pin_write(ev.pin, ev.new, ev.source, ev.t_ms)
    assert replay.snapshot() == home.snapshot()


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_sensor_pins_never_carry_manual_or_auto(seed):
    rng = random.Random(seed)
    home = make_home()
    for t in range(100):
        pin = rng.choice(WRITE_PINS)
        source = rng.choice(["device", "manual", "auto"])
        try:
            home.apply_pin_write(pin, "v", source, t,
                                 device_id=OWNER[pin]
                                 if source == "device" else None)
        except WriteRejected:
            pass
    for pin, st_ in home.pins.items():
        if pin == MODE_PIN:
            continue
        if home.pin_direction(pin) == "sensor":
            assert st_.source == "device"


def test_timestamps_monotonic_per_pin():
    home = make_home()
    rng = random.Random(1)
    last: dict[int, int] = {}
    for _ in range(200):
        pin = rng.choice(WRITE_PINS)
        t = rng.randint(0, 1000)
        try:
            home.apply_pin_write(pin, "v", "device", t, device_id=OWNER[pin])
        except WriteRejected:
            continue
        assert t >= last.get(pin, 0)
        last[pin] = t
