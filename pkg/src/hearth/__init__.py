"""hearth: a self-hosted smart-home gateway with a framed virtual-pin
device protocol, auto/manual rules, 1 Hz telemetry logging, deduplicated
alerting, realtime multi-session fanout, and a deterministic simulator
for the device fleet."""

__version__ = "0.1.0"
