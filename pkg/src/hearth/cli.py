"""hearth: single entry point for the gateway, simulators and log tools.

Exit codes: 0 success, 1 runtime error, 2 usage/config error.  The
environment variables HEARTH_DEVICE_PORT, HEARTH_HTTP_PORT and
HEARTH_DATA_DIR override the corresponding flags.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
import sys
from pathlib import Path

import click

from .config import (
    DEFAULT_DEVICE_PORT,
    DEFAULT_HTTP_PORT,
    ConfigError,
    demo_config,
    dump_demo_config_yaml,
    load_config,
)
from .demo import format_report, run_demo
from .sim import Outage, SimParams, World, build_nodes, parse_outage_script
from .telemetry import export_lines

logger = logging.getLogger(__name__)


def _env_int(name: str, fallback: int) -> int:
    raw = os.environ.get(name)
    if raw is None:
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise click.UsageError(f"{name} must be an integer, got {raw!r}")


def _env_path(name: str, fallback: str) -> str:
    return os.environ.get(name) or fallback


def _load_or_die(path: str):
    try:
        return load_config(path)
    except ConfigError as e:
        click.echo(f"invalid config: {e}", err=True)
        sys.exit(2)


def _read_outages(path: str | None) -> list[Outage]:
    if path is None:
        return []
    try:
        return parse_outage_script(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        click.echo(f"bad outage script: {e}", err=True)
        sys.exit(2)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool) -> None:
    """Self-hosted smart-home gateway and device fleet simulator."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Deployment config (YAML).")
@click.option("--device-port", default=DEFAULT_DEVICE_PORT, show_default=True)
@click.option("--http-port", default=DEFAULT_HTTP_PORT, show_default=True)
@click.option("--data-dir", default="./hearth-data", show_default=True)
@click.option("--ui-dir", default=None,
              help="Static control-panel build to serve at /.")
def serve(config_path: str, device_port: int, http_port: int, data_dir: str,
          ui_dir: str | None) -> None:
    """Run the gateway: TCP device plane + HTTP app plane."""
    from .server import run_server

    config = _load_or_die(config_path)
    device_port = _env_int("HEARTH_DEVICE_PORT", device_port)
    http_port = _env_int("HEARTH_HTTP_PORT", http_port)
    data_dir = _env_path("HEARTH_DATA_DIR", data_dir)
    if ui_dir is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = str(bundled) if bundled.is_dir() else None
    try:
        run_server(config, data_dir, device_port, http_port, ui_dir)
    except OSError as e:
        click.echo(f"bind failed: {e}", err=True)
        sys.exit(1)
    except KeyboardInterrupt:
        pass


@main.command()
@click.option("--profile", default="all", show_default=True,
              type=click.Choice(["gps", "env", "relay", "all"]))
@click.option("--server", "server_addr", default=f"127.0.0.1:{DEFAULT_DEVICE_PORT}",
              show_default=True, help="Gateway device plane HOST:PORT.")
@click.option("--seed", default=7, show_default=True)
@click.option("--outages", "outages_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Script of 'down <t_s> <duration_s>' lines.")
@click.option("--duration", default=60, show_default=True,
              help="Run length in seconds (one tick per second).")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Deployment config for tokens/pins (default: built-in demo).")
def sim(profile: str, server_addr: str, seed: int, outages_path: str | None,
        duration: int, config_path: str | None) -> None:
    """Run simulated nodes against a live gateway over real sockets."""
    from .simclient import run_nodes

    config = _load_or_die(config_path) if config_path else demo_config()
    home_cfg = config.homes[next(iter(config.homes))]
    try:
        host, port_str = server_addr.rsplit(":", 1)
        port = int(port_str)
    except ValueError:
        raise click.UsageError(f"--server must be HOST:PORT, got {server_addr!r}")

    params = SimParams(seed=seed)
    world = World(params.tank)
    nodes, _ = build_nodes(home_cfg, params, world)
    if profile != "all":
        nodes = {d: n for d, n in nodes.items() if n.kind == profile}
        if not nodes:
            raise click.UsageError(f"no {profile} device in the deployment")
    script = _read_outages(outages_path)
    outage_map = {d: script for d in nodes}

    summaries = asyncio.run(run_nodes(nodes, world, host, port, duration,
                                      outage_map))
    click.echo("transcript summary:")
    for summary in summaries:
        click.echo(f"  {summary['device']}: sent={summary['sent']} "
                   f"digest={summary['digest']}")
    received = {d: nodes[d].frames_received for d in sorted(nodes)}
    click.echo(f"link stats (received): {json.dumps(received, sort_keys=True)}")


@main.command()
@click.option("--duration", default=300, show_default=True,
              help="Virtual seconds to simulate.")
@click.option("--seed", default=7, show_default=True)
@click.option("--data-dir", default="./hearth-demo-data", show_default=True)
@click.option("--mode", default="auto", show_default=True,
              type=click.Choice(["auto", "manual"]),
              help="Initial operating mode of the demo home.")
@click.option("--outages", "outages_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Household Wi-Fi outage script applied to the env and "
                   "relay nodes (the GPS node rides its own link).")
def demo(duration: int, seed: int, data_dir: str, mode: str,
         outages_path: str | None) -> None:
    """Gateway plus all three nodes in-process on the virtual clock."""
    data_dir = _env_path("HEARTH_DATA_DIR", data_dir)
    script = _read_outages(outages_path)
    outage_map = {"env-node": script, "relay-node": script} if script else None
    report = run_demo(data_dir, duration, seed=seed, mode=mode,
                      outages=outage_map)
    click.echo(format_report(report))


@main.command()
@click.option("--data-dir", default="./hearth-data", show_default=True)
@click.option("--home", "home_id", required=True)
@click.option("--pin", default=None, type=int)
@click.option("--from", "from_ms", default=None, type=int,
              help="Inclusive lower bound, ms since epoch.")
@click.option("--to", "to_ms", default=None, type=int,
              help="Exclusive upper bound, ms since epoch.")
def export(data_dir: str, home_id: str, pin: int | None, from_ms: int | None,
           to_ms: int | None) -> None:
    """Dump stored telemetry as TSV on stdout."""
    data_dir = _env_path("HEARTH_DATA_DIR", data_dir)
    out = sys.stdout
    for line in export_lines(data_dir, home_id, pin, from_ms, to_ms):
        out.write(line + "\n")


@main.command("validate-config")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
def validate_config(config_path: str) -> None:
    """Check a deployment config; exit 2 with diagnostics if invalid."""
    config = _load_or_die(config_path)
    homes = ", ".join(sorted(config.homes))
    click.echo(f"config OK: homes [{homes}]")


@main.command("print-demo-config")
def print_demo_config() -> None:
    """Print the built-in demo deployment as YAML (a serve starting point)."""
    click.echo(dump_demo_config_yaml(), nl=False)


if __name__ == "__main__":
    main()
