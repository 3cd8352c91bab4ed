"""Network front of the gateway: TCP device plane and HTTP app plane.

Both planes run on one asyncio loop and call the synchronous gateway core
directly, which serializes every home's state transitions for free.  App
sessions get the live stream over server-sent events; a session that
stops draining its bounded queue is disconnected rather than allowed to
block the home.
"""

from __future__ import annotations

import asyncio
import json
import logging
import time
from pathlib import Path

import uvicorn
from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .config import DeploymentConfig
from .gateway import Gateway, ModeConflict
from .model import MODE_AUTO, MODE_MANUAL, WriteRejected
from .notify import Notifier
from .proto import ProtocolError, StreamDecoder, encode_frame
from .telemetry import TelemetryStore

logger = logging.getLogger(__name__)

_CLOSE = object()


def wall_clock_ms() -> int:
    return int(time.time() * 1000)


class TcpDeviceTransport:
    def __init__(self, writer: asyncio.StreamWriter):
        self._writer = writer

    def send_frame(self, frame) -> None:
        if not self._writer.is_closing():
            self._writer.write(encode_frame(frame))

    def close(self) -> None:
        if not self._writer.is_closing():
            self._writer.close()


class QueueSink:
    """Bounded app-session queue; overflow reports failure to the core."""

    def __init__(self, maxsize: int):
        self.queue: asyncio.Queue = asyncio.Queue(maxsize=maxsize)

    def send(self, event: dict) -> bool:
        try:
            self.queue.put_nowait(event)
            return True
        except asyncio.QueueFull:
            return False

    def close(self) -> None:
        try:
            self.queue.put_nowait(_CLOSE)
        except asyncio.QueueFull:
            pass  # reader will hit the overflow disconnect anyway


async def handle_device_connection(gateway: Gateway,
                                   reader: asyncio.StreamReader,
                                   writer: asyncio.StreamWriter) -> None:
    session = gateway.device_connected(TcpDeviceTransport(writer))
    decoder = StreamDecoder()
    try:
        while True:
            data = await reader.read(4096)
            if not data:
                break
            for frame in decoder.feed(data):
                gateway.on_device_frame(session, frame)
    except ProtocolError as e:
        logger.warning("dropping device connection: %s", e)
    except (ConnectionError, asyncio.IncompleteReadError):
        pass
    finally:
        gateway.device_disconnected(session)
        if not writer.is_closing():
            writer.close()


class PinWriteBody(BaseModel):
    value: str


class ModeBody(BaseModel):
    mode: str


def build_app(gateway: Gateway, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="hearth gateway", version="0.1.0")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    def authorized(home_id: str, request: Request,
                   token: str | None = Query(default=None)) -> str:
        if home_id not in gateway.homes:
            raise HTTPException(404, detail={"error": "UNKNOWN_HOME"})
        header = request.headers.get("authorization", "")
        bearer = header[7:] if header.lower().startswith("bearer ") else None
        supplied = bearer or token
        if not supplied or not gateway.app_token_valid(home_id, supplied):
            raise HTTPException(401, detail={"error": "INVALID_TOKEN"})
        return home_id

    @app.get("/api/homes/{home_id}/state")
    def get_state(home_id: str = Depends(authorized)):
        return gateway.home_state(home_id)

    @app.post("/api/homes/{home_id}/pins/{pin}")
    def post_pin(pin: int, body: PinWriteBody,
                 home_id: str = Depends(authorized)):
        try:
            ev = gateway.app_pin_write(home_id, pin, body.value)
        except ModeConflict as e:
            raise HTTPException(409, detail={"error": "MODE_CONFLICT",
                                             "message": str(e)}) from e
        except WriteRejected as e:
            status = 404 if e.reason == "undeclared_pin" else 409
            raise HTTPException(status, detail={"error": e.reason.upper(),
                                                "message": str(e)}) from e
        return {"ok": True, "pin": ev.pin, "value": ev.new, "t_ms": ev.t_ms}

    @app.post("/api/homes/{home_id}/mode")
    def post_mode(body: ModeBody, home_id: str = Depends(authorized)):
        if body.mode not in (MODE_MANUAL, MODE_AUTO):
            raise HTTPException(400, detail={"error": "BAD_MODE"})
        ev = gateway.app_set_mode(home_id, body.mode)
        return {"ok": True, "mode": body.mode, "changed": ev is not None}

    @app.get("/api/homes/{home_id}/history")
    def get_history(pin: int, home_id: str = Depends(authorized),
                    from_ms: int = Query(default=0, alias="from"),
                    to_ms: int | None = Query(default=None, alias="to"),
                    bucket: int | None = Query(default=None)):
        t1 = to_ms if to_ms is not None else wall_clock_ms() + 1
        if t1 < from_ms:
            raise HTTPException(400, detail={"error": "BAD_RANGE"})
        if bucket is None:
            samples = gateway.history(home_id, pin, from_ms, t1)
            return {"pin": pin, "samples": [
                {"t_ms": s.t_ms, "value": s.value, "device": s.device_id}
                for s in samples]}
        if bucket < 1000:
            raise HTTPException(400, detail={"error": "BAD_BUCKET"})
        buckets = gateway.history(home_id, pin, from_ms, t1, bucket)
        return {"pin": pin, "bucket_ms": bucket, "buckets": [
            {"start_ms": b.start_ms, "count": b.count, "min": b.min,
             "max": b.max, "mean": b.mean} for b in buckets]}

    @app.get("/api/homes/{home_id}/alerts")
    def get_alerts(home_id: str = Depends(authorized)):
        return {"alerts": gateway.recent_alerts(home_id)}

    @app.get("/api/homes/{home_id}/events")
    async def get_events(home_id: str = Depends(authorized)):
        sink = QueueSink(gateway.config.fanout_buffer)
        session = gateway.attach_app(home_id, sink)

        async def stream():
            try:
                yield ": connected\n\n"
                while True:
                    try:
                        event = await asyncio.wait_for(sink.queue.get(),
                                                       timeout=15.0)
                    except asyncio.TimeoutError:
                        yield ": keepalive\n\n"
                        continue
                    if event is _CLOSE:
                        break
                    yield f"data: {json.dumps(event)}\n\n"
            finally:
                gateway.detach_app(session)

        return StreamingResponse(stream(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache"})

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True),
                  name="panel")

    return app


class GatewayServer:
    """Owns the full serving stack for one deployment."""

    def __init__(self, config: DeploymentConfig, data_dir: str | Path,
                 device_port: int, http_port: int,
                 ui_dir: str | Path | None = None, host: str = "0.0.0.0"):
        self.config = config
        self.host = host
        self.device_port = device_port
        self.http_port = http_port
        self.telemetry = TelemetryStore(data_dir)
        self.notifier = Notifier(Path(data_dir) / "outbox",
                                 config.notify_window_s, self.telemetry)
        for home in config.homes.values():
            for binding in home.sinks:
                self.notifier.register_sink(binding)
        self.gateway = Gateway(config, self.telemetry, self.notifier,
                               wall_clock_ms)
        self.app = build_app(self.gateway, ui_dir)
        self._tcp_server: asyncio.AbstractServer | None = None

    async def start_device_plane(self) -> None:
        self._tcp_server = await asyncio.start_server(
            lambda r, w: handle_device_connection(self.gateway, r, w),
            self.host, self.device_port)

    async def sweep_loop(self) -> None:
        while True:
            await asyncio.sleep(1.0)
            self.gateway.sweep(wall_clock_ms())

    async def serve_forever(self) -> None:
        await self.start_device_plane()
        uv_config = uvicorn.Config(self.app, host=self.host,
                                   port=self.http_port, log_level="warning",
                                   access_log=False)
        uv_server = uvicorn.Server(uv_config)
        sweeper = asyncio.create_task(self.sweep_loop())
        print(f"hearth gateway ready: devices on :{self.device_port}, "
              f"http on :{self.http_port}", flush=True)
        try:
            await uv_server.serve()
        finally:
            sweeper.cancel()
            self._tcp_server.close()
            await self._tcp_server.wait_closed()
            self.telemetry.close()


def run_server(config: DeploymentConfig, data_dir: str | Path,
               device_port: int, http_port: int,
               ui_dir: str | Path | None = None) -> None:
    server = GatewayServer(config, data_dir, device_port, http_port, ui_dir)
    asyncio.run(server.serve_forever())
