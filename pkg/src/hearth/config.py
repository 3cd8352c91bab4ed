"""Deployment configuration: homes, devices, rules, sinks, timing knobs.

Loaded from one declarative YAML file (schema documented in the README)
and validated against the home-model and rules-engine uniqueness
constraints; an invalid config aborts startup.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .model import DIR_ACTUATOR, DIR_SENSOR, MODE_AUTO, MODE_MANUAL, MODE_PIN, DeviceSpec
from .notify import DEFAULT_WINDOW_S, SinkBinding
from .rules import (
    HysteresisRule,
    MotionAlarmRule,
    Rule,
    ThresholdRule,
    validate_rules,
)

DEFAULT_DEVICE_PORT = 8442
DEFAULT_HTTP_PORT = 8080
DEFAULT_HEARTBEAT_TIMEOUT_MS = 5000
DEFAULT_FANOUT_BUFFER = 1024

_TOKEN_RE = re.compile(r"^[0-9a-f]{32}$")


class ConfigError(Exception):
    """Invalid deployment config; startup must abort."""


@dataclass
class HomeConfig:
    home_id: str
    mode: str
    devices: dict[str, DeviceSpec]
    rules: list[Rule]
    app_tokens: list[str]
    sinks: list[SinkBinding] = field(default_factory=list)


@dataclass
class DeploymentConfig:
    homes: dict[str, HomeConfig]
    heartbeat_timeout_ms: int = DEFAULT_HEARTBEAT_TIMEOUT_MS
    notify_window_s: int = DEFAULT_WINDOW_S
    fanout_buffer: int = DEFAULT_FANOUT_BUFFER

    def device_token_index(self) -> dict[str, tuple[str, str]]:
        """auth token -> (home_id, device_id)."""
        index = {}
        for home in self.homes.values():
            for dev in home.devices.values():
                index[dev.auth_token] = (home.home_id, dev.device_id)
        return index


def load_config(path: str | Path) -> DeploymentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return parse_config(raw)


def parse_config(raw: dict) -> DeploymentConfig:
    homes_raw = raw.get("homes")
    if not isinstance(homes_raw, list) or not homes_raw:
        raise ConfigError("config needs a nonempty 'homes' list")
    homes: dict[str, HomeConfig] = {}
    all_tokens: set[str] = set()
    for h in homes_raw:
        home = _parse_home(h, all_tokens)
        if home.home_id in homes:
            raise ConfigError(f"duplicate home_id {home.home_id!r}")
        homes[home.home_id] = home
    timing = raw.get("heartbeat", {}) or {}
    timeout_ms = int(timing.get("timeout_ms", DEFAULT_HEARTBEAT_TIMEOUT_MS))
    if timeout_ms < 1000:
        raise ConfigError("heartbeat timeout_ms must be >= 1000")
    window_s = int(raw.get("notify_window_s", DEFAULT_WINDOW_S))
    if window_s < 1:
        raise ConfigError("notify_window_s must be >= 1")
    fanout_buffer = int(raw.get("fanout_buffer", DEFAULT_FANOUT_BUFFER))
    if fanout_buffer < 1:
        raise ConfigError("fanout_buffer must be >= 1")
    return DeploymentConfig(homes, timeout_ms, window_s, fanout_buffer)


def _parse_home(raw: dict, all_tokens: set[str]) -> HomeConfig:
    try:
        home_id = str(raw["home_id"])
    except KeyError:
        raise ConfigError("home entry missing home_id") from None
    mode = str(raw.get("mode", MODE_MANUAL))
    if mode not in (MODE_MANUAL, MODE_AUTO):
        raise ConfigError(f"{home_id}: mode must be manual or auto")

    devices: dict[str, DeviceSpec] = {}
    pin_dirs: dict[int, str] = {}
    for d in raw.get("devices", []) or []:
        dev = _parse_device(home_id, d)
        if dev.device_id in devices:
            raise ConfigError(f"{home_id}: duplicate device_id {dev.device_id!r}")
        if dev.auth_token in all_tokens:
            raise ConfigError(f"{home_id}: token of {dev.device_id} is not unique")
        all_tokens.add(dev.auth_token)
        for pin in dev.pins:
            if pin in pin_dirs:
                raise ConfigError(f"{home_id}: pin {pin} declared by two devices")
        devices[dev.device_id] = dev
        pin_dirs.update(dev.pins)

    rules = [_parse_rule(home_id, r) for r in raw.get("rules", []) or []]
    try:
        validate_rules(rules, pin_dirs)
    except ValueError as e:
        raise ConfigError(f"{home_id}: {e}") from e

    app_tokens = [str(t) for t in raw.get("app_tokens", []) or []]
    if not app_tokens:
        raise ConfigError(f"{home_id}: at least one app token is required")

    sinks = []
    for s in raw.get("sinks", []) or []:
        binding = SinkBinding(str(s.get("kind", "")), str(s.get("destination", "")),
                              bool(s.get("enabled", True)))
        if binding.kind not in ("email", "push", "inmemory"):
            raise ConfigError(f"{home_id}: unknown sink kind {binding.kind!r}")
        if not binding.destination:
            raise ConfigError(f"{home_id}: sink destination must be nonempty")
        sinks.append(binding)

    return HomeConfig(home_id, mode, devices, rules, app_tokens, sinks)


def _parse_device(home_id: str, raw: dict) -> DeviceSpec:
    try:
        device_id = str(raw["device_id"])
        token = str(raw["token"])
    except KeyError as e:
        raise ConfigError(f"{home_id}: device entry missing {e}") from None
    if not _TOKEN_RE.match(token):
        raise ConfigError(
            f"{home_id}/{device_id}: token must be 32 lowercase hex chars")
    pins: dict[int, str] = {}
    for p in raw.get("pins", []) or []:
        pin = int(p["pin"])
        direction = str(p["direction"])
        if not 0 <= pin < MODE_PIN:
            raise ConfigError(
                f"{home_id}/{device_id}: pin {pin} outside 0-126 "
                f"({MODE_PIN} is the reserved mode pin)")
        if direction not in (DIR_SENSOR, DIR_ACTUATOR):
            raise ConfigError(
                f"{home_id}/{device_id}: pin {pin} direction must be "
                "sensor or actuator")
        if pin in pins:
            raise ConfigError(f"{home_id}/{device_id}: pin {pin} declared twice")
        pins[pin] = direction
    return DeviceSpec(device_id, token, pins)


def _parse_rule(home_id: str, raw: dict) -> Rule:
    kind = str(raw.get("kind", ""))
    try:
        rule_id = str(raw["rule_id"])
        klass = str(raw["class"])
        if kind == "hysteresis":
            return HysteresisRule(rule_id, klass, int(raw["input_pin"]),
                                  int(raw["output_pin"]), str(raw["on_when"]),
                                  float(raw["on_threshold"]),
                                  float(raw["off_threshold"]))
        if kind == "threshold":
            return ThresholdRule(rule_id, klass, int(raw["input_pin"]),
                                 int(raw["output_pin"]), float(raw["on_above"]),
                                 float(raw["off_below"]))
        if kind == "motion_alarm":
            return MotionAlarmRule(rule_id, klass, int(raw["input_pin"]),
                                   int(raw["alarm_pin"]), int(raw["hold_s"]),
                                   bool(raw.get("notify", True)))
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"{home_id}: bad rule {raw.get('rule_id', '?')!r}: {e}") from e
    raise ConfigError(f"{home_id}: rule kind must be hysteresis, threshold "
                      f"or motion_alarm, not {kind!r}")


# Default desk-scale deployment: one home, the paper's three sub-systems.
# Pin map: V1 temperature, V2 humidity, V3 motion, V4 tank level (env node);
# V10/V11 latitude/longitude (gps node); V20 pump, V21 fan, V22 light,
# V23 alarm siren (relay node).
DEMO_HOME = "home-1"
DEMO_APP_TOKEN = "family-sofa-key"
ENV_NODE = "env-node"
GPS_NODE = "gps-node"
RELAY_NODE = "relay-node"

PIN_TEMP = 1
PIN_HUMIDITY = 2
PIN_MOTION = 3
PIN_TANK_LEVEL = 4
PIN_LAT = 10
PIN_LON = 11
PIN_PUMP = 20
PIN_FAN = 21
PIN_LIGHT = 22
PIN_SIREN = 23

DEMO_TOKENS = {
    ENV_NODE: "5f2c9a1d8e3b47a6915c2d8f4a7b3e01",
    GPS_NODE: "9b4e7d2a6c1f58e3047a9d5b8c2f6e13",
    RELAY_NODE: "3a8d5f1c7e2b96d4b08c4e7a1f5d9b26",
}


def demo_config(mode: str = MODE_AUTO) -> DeploymentConfig:
    """The built-in single-home deployment used by `demo` and the tests."""
    raw = {
        "homes": [{
            "home_id": DEMO_HOME,
            "mode": mode,
            "app_tokens": [DEMO_APP_TOKEN],
            "devices": [
                {"device_id": ENV_NODE, "token": DEMO_TOKENS[ENV_NODE],
                 "pins": [
                     {"pin": PIN_TEMP, "direction": "sensor"},
                     {"pin": PIN_HUMIDITY, "direction": "sensor"},
                     {"pin": PIN_MOTION, "direction": "sensor"},
                     {"pin": PIN_TANK_LEVEL, "direction": "sensor"},
                 ]},
                {"device_id": GPS_NODE, "token": DEMO_TOKENS[GPS_NODE],
                 "pins": [
                     {"pin": PIN_LAT, "direction": "sensor"},
                     {"pin": PIN_LON, "direction": "sensor"},
                 ]},
                {"device_id": RELAY_NODE, "token": DEMO_TOKENS[RELAY_NODE],
                 "pins": [
                     {"pin": PIN_PUMP, "direction": "actuator"},
                     {"pin": PIN_FAN, "direction": "actuator"},
                     {"pin": PIN_LIGHT, "direction": "actuator"},
                     {"pin": PIN_SIREN, "direction": "actuator"},
                 ]},
            ],
            "rules": [
                {"rule_id": "pump", "class": "vital", "kind": "hysteresis",
                 "input_pin": PIN_TANK_LEVEL, "output_pin": PIN_PUMP,
                 "on_when": "below", "on_threshold": 20, "off_threshold": 90},
                {"rule_id": "fan", "class": "comfort", "kind": "threshold",
                 "input_pin": PIN_TEMP, "output_pin": PIN_FAN,
                 "on_above": 28, "off_below": 26},
                {"rule_id": "intruder", "class": "vital", "kind": "motion_alarm",
                 "input_pin": PIN_MOTION, "alarm_pin": PIN_SIREN,
                 "hold_s": 30, "notify": True},
            ],
            "sinks": [
                {"kind": "email", "destination": "owner@example.com"},
            ],
        }],
    }
    return parse_config(raw)


def dump_demo_config_yaml() -> str:
    """Render the built-in demo deployment as a YAML document."""
    cfg = demo_config()
    home = cfg.homes[DEMO_HOME]
    doc = {
        "homes": [{
            "home_id": home.home_id,
            "mode": home.mode,
            "app_tokens": home.app_tokens,
            "devices": [
                {"device_id": d.device_id, "token": d.auth_token,
                 "pins": [{"pin": p, "direction": dirn}
                          for p, dirn in sorted(d.pins.items())]}
                for d in home.devices.values()
            ],
            "rules": [
                {"rule_id": "pump", "class": "vital", "kind": "hysteresis",
                 "input_pin": PIN_TANK_LEVEL, "output_pin": PIN_PUMP,
                 "on_when": "below", "on_threshold": 20, "off_threshold": 90},
                {"rule_id": "fan", "class": "comfort", "kind": "threshold",
                 "input_pin": PIN_TEMP, "output_pin": PIN_FAN,
                 "on_above": 28, "off_below": 26},
                {"rule_id": "intruder", "class": "vital", "kind": "motion_alarm",
                 "input_pin": PIN_MOTION, "alarm_pin": PIN_SIREN,
                 "hold_s": 30, "notify": True},
            ],
            "sinks": [{"kind": s.kind, "destination": s.destination,
                       "enabled": s.enabled} for s in home.sinks],
        }],
        "heartbeat": {"timeout_ms": cfg.heartbeat_timeout_ms},
        "notify_window_s": cfg.notify_window_s,
    }
    return yaml.safe_dump(doc, sort_keys=False)
