"""In-process scenario harness: the gateway core plus the three simulated
nodes stepped on one shared virtual clock, no sockets.

Frames still travel through the codec as bytes in both directions, so the
demo exercises the same parsing paths as the TCP plane.  Within each tick
the order is fixed: link script transitions, tank integration, node steps
in device_id order (frames delivered synchronously), then the gateway's
1 Hz sweep.  The same (seed, config, outage script, duration) therefore
produces identical reports and identical telemetry, byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .config import DeploymentConfig, demo_config
from .gateway import Gateway
from .model import ChangeEvent
from .notify import Notifier
from .proto import decode_frame, encode_frame
from .sim import Outage, SimParams, VirtualClock, World, build_nodes
from .telemetry import TelemetryStore, export_lines


class RecorderSink:
    """App session sink that keeps every event; never overflows."""

    def __init__(self):
        self.events: list[dict] = []
        self.closed = False

    def send(self, event: dict) -> bool:
        self.events.append(event)
        return True

    def close(self) -> None:
        self.closed = True


class _NodeWire:
    """Gateway-side transport handle delivering to a node's radio."""

    def __init__(self, node, uplink):
        self._node = node
        self._uplink = uplink
        self.live = True

    def send_frame(self, frame) -> None:
        if not self.live:
            return
        decoded, _ = decode_frame(encode_frame(frame))
        self._node.on_inbound(decoded)

    def close(self) -> None:
        self.live = False
        self._uplink.live = False


class DirectUplink:
    """Node-side handle: frames go straight into the gateway core."""

    def __init__(self, gateway: Gateway, node):
        self.live = True
        self._gateway = gateway
        self.session = gateway.device_connected(_NodeWire(node, self))

    def send(self, frame) -> None:
        if not self.live:
            return
        decoded, _ = decode_frame(encode_frame(frame))
        self._gateway.on_device_frame(self.session, decoded)


class DemoHarness:
    """Drives one home's full pipeline on virtual time.

    outages maps device_id -> list of Outage windows (sim seconds).  Extra
    app sessions can be attached with attach_recorder(); recorder 0 always
    exists and feeds the scenario report.
    """

    def __init__(self, data_dir: str | Path, config: DeploymentConfig | None = None,
                 params: SimParams | None = None,
                 outages: dict[str, list[Outage]] | None = None):
        self.config = config if config is not None else demo_config()
        self.params = params if params is not None else SimParams()
        self.data_dir = Path(data_dir)
        self.home_id = next(iter(self.config.homes))
        home_cfg = self.config.homes[self.home_id]

        self.clock = VirtualClock()
        self.telemetry = TelemetryStore(self.data_dir)
        self.notifier = Notifier(self.data_dir / "outbox",
                                 self.config.notify_window_s, self.telemetry)
        for binding in home_cfg.sinks:
            self.notifier.register_sink(binding)
        self.gateway = Gateway(self.config, self.telemetry, self.notifier,
                               self.clock)
        self.world = World(self.params.tank)
        self.nodes, _ = build_nodes(home_cfg, self.params, self.world)
        self._node_order = sorted(self.nodes)
        self.outages = outages or {}
        self.recorder = self.attach_recorder()
        self.level_min = self.world.tank.level
        self.level_max = self.world.tank.level
        self.ticks = 0

    def attach_recorder(self) -> RecorderSink:
        sink = RecorderSink()
        self.gateway.attach_app(self.home_id, sink)
        return sink

    # ------------------------------------------------------------------

    def tick(self) -> int:
        """Advance one virtual second through the whole pipeline."""
        now = self.clock.advance()
        now_s = now // 1000
        for device_id in self._node_order:
            node = self.nodes[device_id]
            for outage in self.outages.get(device_id, ()):
                if now_s == outage.start_s:
                    node.set_link(False, now)
                elif now_s == outage.end_s:
                    node.set_link(True, now)
        self.world.advance(self.clock.step_ms / 1000.0)
        self.level_min = min(self.level_min, self.world.tank.level)
        self.level_max = max(self.level_max, self.world.tank.level)
        for device_id in self._node_order:
            node = self.nodes[device_id]
            if node.needs_connect():
                node.attach_uplink(DirectUplink(self.gateway, node))
            node.step(now)
        self.gateway.sweep(now)
        self.ticks += 1
        return now

    def run(self, duration_s: int) -> dict:
        for _ in range(duration_s):
            self.tick()
        return self.report()

    # -- app-plane actions between ticks ---------------------------------

    def app_pin_write(self, pin: int, value: str) -> ChangeEvent:
        return self.gateway.app_pin_write(self.home_id, pin, value)

    def set_mode(self, mode: str) -> ChangeEvent | None:
        return self.gateway.app_set_mode(self.home_id, mode)

    # -- results -----------------------------------------------------------

    def change_events(self, pin: int | None = None) -> list[dict]:
        events = [e for e in self.recorder.events if e["type"] == "change"]
        if pin is not None:
            events = [e for e in events if e["pin"] == pin]
        return events

    def alert_events(self) -> list[dict]:
        return [e for e in self.recorder.events if e["type"] == "alert"]

    def pump_toggles(self) -> list[tuple[int, str]]:
        home_cfg = self.config.homes[self.home_id]
        pump_pins = [r for r in home_cfg.rules if r.rule_id == "pump"]
        pin = pump_pins[0].output_pin if pump_pins else 20
        return [(e["t_ms"], e["value"]) for e in self.change_events(pin)]

    def telemetry_digest(self) -> str:
        self.telemetry.flush()
        digest = hashlib.sha256()
        for line in export_lines(self.data_dir, self.home_id):
            digest.update(line.encode("utf-8"))
            digest.update(b"\n")
        return digest.hexdigest()

    def report(self) -> dict:
        self.telemetry.flush()
        home_cfg = self.config.homes[self.home_id]
        sensor_counts = {}
        for dev in home_cfg.devices.values():
            for pin in dev.sensor_pins():
                sensor_counts[str(pin)] = len(self.telemetry.query_range(
                    self.home_id, pin, 0, self.clock.now_ms + 1))
        alerts = self.alert_events()
        toggles = self.pump_toggles()
        return {
            "home": self.home_id,
            "mode": self.gateway.homes[self.home_id].state.mode,
            "duration_s": self.ticks,
            "seed": self.params.seed,
            "samples_logged": self.telemetry.total_samples(),
            "sensor_samples": sensor_counts,
            "pump_toggles": len(toggles),
            "alerts_raised": len(alerts),
            "alerts_delivered": sum(1 for a in alerts if a["delivered"]),
            "fanout_events": len(self.recorder.events),
            "tank_level_min": self.level_min,
            "tank_level_max": self.level_max,
            "nodes": [self.nodes[d].transcript_summary()
                      for d in self._node_order],
            "telemetry_digest": self.telemetry_digest(),
        }

    def close(self) -> None:
        self.telemetry.close()


def run_demo(data_dir: str | Path, duration_s: int, seed: int = 7,
             mode: str = "auto",
             outages: dict[str, list[Outage]] | None = None) -> dict:
    """One-shot demo run; returns the scenario report dict."""
    harness = DemoHarness(data_dir, config=demo_config(mode),
                          params=SimParams(seed=seed), outages=outages)
    try:
        return harness.run(duration_s)
    finally:
        harness.close()


def format_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)
