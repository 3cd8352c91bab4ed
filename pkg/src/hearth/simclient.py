"""Socket-mode runner: the same simulator nodes speaking to a live gateway
over real TCP, paced by the wall clock at one tick per second.

Node-internal time is still the virtual timeline starting at zero, so a
fixed seed gives identical sent transcripts run after run; only server
timestamps differ.  A link-down keeps the old socket open but silent (the
server must notice via heartbeat); zombies are closed at the end."""

from __future__ import annotations

import asyncio
import logging
import time

from .proto import Frame, ProtocolError, StreamDecoder, encode_frame
from .sim import Outage, SimNode, VirtualClock, World

logger = logging.getLogger(__name__)


class SocketUplink:
    def __init__(self, node: SimNode, reader: asyncio.StreamReader,
                 writer: asyncio.StreamWriter):
        self.live = True
        self.node = node
        self.reader = reader
        self.writer = writer
        self._reader_task = asyncio.get_running_loop().create_task(self._pump())

    def send(self, frame: Frame) -> None:
        if self.live and not self.writer.is_closing():
            self.writer.write(encode_frame(frame))

    async def _pump(self) -> None:
        decoder = StreamDecoder()
        try:
            while True:
                data = await self.reader.read(4096)
                if not data:
                    break
                for frame in decoder.feed(data):
                    self.node.on_inbound(frame)
        except (ConnectionError, ProtocolError) as e:
            logger.debug("%s uplink lost: %s", self.node.device_id, e)
        finally:
            self.live = False

    async def shutdown(self) -> None:
        self._reader_task.cancel()
        try:
            await self._reader_task
        except asyncio.CancelledError:
            pass
        if not self.writer.is_closing():
            self.writer.close()


async def run_nodes(nodes: dict[str, SimNode], world: World, host: str,
                    port: int, duration_s: int,
                    outages: dict[str, list[Outage]] | None = None,
                    realtime: bool = True) -> list[dict]:
    """Step the nodes for duration_s ticks against a live server.

    Returns the per-node transcript summaries (sent side, deterministic).
    """
    outages = outages or {}
    clock = VirtualClock()
    order = sorted(nodes)
    uplinks: list[SocketUplink] = []
    start = time.monotonic()
    for k in range(1, duration_s + 1):
        now = clock.advance()
        now_s = now // 1000
        for device_id in order:
            node = nodes[device_id]
            for outage in outages.get(device_id, ()):
                if now_s == outage.start_s:
                    node.set_link(False, now)
                elif now_s == outage.end_s:
                    node.set_link(True, now)
        world.advance(clock.step_ms / 1000.0)
        for device_id in order:
            node = nodes[device_id]
            if node.needs_connect():
                try:
                    reader, writer = await asyncio.open_connection(host, port)
                except OSError as e:
                    logger.warning("%s cannot reach %s:%d: %s",
                                   device_id, host, port, e)
                    continue
                uplink = SocketUplink(node, reader, writer)
                uplinks.append(uplink)
                node.attach_uplink(uplink)
            node.step(now)
            if node.uplink is not None and isinstance(node.uplink, SocketUplink):
                if not node.uplink.writer.is_closing():
                    await node.uplink.writer.drain()
        if realtime:
            next_tick = start + k
            delay = next_tick - time.monotonic()
            if delay > 0:
                await asyncio.sleep(delay)
        else:
            await asyncio.sleep(0)  # let reader tasks run
    # linger briefly so in-flight responses land in the stats
    await asyncio.sleep(0.2 if realtime else 0.05)
    for uplink in uplinks:
        await uplink.shutdown()
    return [nodes[d].transcript_summary() for d in order]
