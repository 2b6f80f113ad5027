"""Live engine service.

One engine, one stepping loop, any number of WebSocket viewers on /ws.
Every step broadcasts a frame:

    {"type": "frame", "step": N, "vehicles": [{id, x, y, heading, speed}],
     "signals": {laneLinkId: "r" | "y" | "g"}}

Clients send commands; each is acknowledged and applied between steps,
never mid-step:

    {"type": "command", "name": ..., "args": {...}, "requestId": ...}
    -> {"type": "ack", "requestId": ..., "ok": true}
    -> {"type": "ack", "requestId": ..., "ok": false, "error": "..."}

Command names: set_phase, set_cycle, set_green_ratio, scale_volume,
pause, resume, reset. set_cycle and set_green_ratio retime the built-in
fixed-time controller, so they are rejected when the config hands signal
control to an external agent (rlTrafficLight).

GET / serves the network geometry so a viewer can draw the map before
the first frame arrives.
"""

# no `from __future__ import annotations` here: the websocket handler's
# parameter annotation must stay a live class for dependency resolution,
# and the fastapi import is deliberately local (optional extra)

import asyncio
import contextlib
import json
import time

from .engine import Engine
from .replay import roadnet_geometry


class CommandError(Exception):
    """Rejected command; the engine state is unchanged."""


class LiveServer:
    def __init__(self, config_path, pace: float = 10.0,
                 max_speed: bool = False):
        if pace <= 0:
            raise ValueError("pace must be positive")
        self.engine = Engine(config_path)
        self.geometry = roadnet_geometry(self.engine.net)
        self.pace = pace
        self.max_speed = max_speed
        self.paused = False
        self.clients: set = set()
        self.pending: list = []    # (websocket, message) command queue

    # -- frames ----------------------------------------------------------

    def frame(self) -> dict:
        eng = self.engine
        vehicles = [{"id": vid, **pose}
                    for vid, pose in sorted(eng.get_vehicle_poses().items())]
        return {"type": "frame", "step": eng.steps, "vehicles": vehicles,
                "signals": eng.get_lanelink_colors()}

    async def broadcast(self, payload: dict):
        text = json.dumps(payload)
        dead = []
        # sends yield control, connects/disconnects mutate the set: snapshot
        for ws in list(self.clients):
            try:
                await ws.send_text(text)
            except Exception:
                dead.append(ws)
        for ws in dead:
            self.clients.discard(ws)

    # -- commands --------------------------------------------------------

    def _apply(self, name, args):
        eng = self.engine
        if name == "set_phase":
            eng.set_tl_phase(str(args["intersectionId"]),
                             int(args["phase"]))
        elif name == "set_cycle":
            self._retime(str(args["intersectionId"]),
                         cycle=float(args["seconds"]))
        elif name == "set_green_ratio":
            self._retime(str(args["intersectionId"]),
                         splits=[float(x) for x in args["splits"]])
        elif name == "scale_volume":
            eng.scale_volume(float(args["factor"]))
        elif name == "pause":
            self.paused = True
        elif name == "resume":
            self.paused = False
        elif name == "reset":
            eng.reset()
        else:
            raise CommandError(f"unknown command {name!r}")

    def _retime(self, intersection_id, cycle=None, splits=None):
        eng = self.engine
        if eng.config.rl_traffic_light:
            raise CommandError(
                "signal timing is under external control (rlTrafficLight); "
                "use set_phase")
        cur = eng.get_phase_durations(intersection_id)
        if not cur:
            raise CommandError(f"{intersection_id} is unsignalized")
        total = sum(cur)
        if cycle is not None and cycle <= 0:
            raise CommandError("cycle seconds must be positive")
        if splits is not None:
            if len(splits) != len(cur):
                raise CommandError(
                    f"{intersection_id} has {len(cur)} phases, "
                    f"got {len(splits)} splits")
            if any(s <= 0 for s in splits) or sum(splits) <= 0:
                raise CommandError("splits must be positive")
            share = sum(splits)
            cur = [s / share * total for s in splits]
        if cycle is not None:
            cur = [d * cycle / total for d in cur]
        eng.set_phase_durations(intersection_id, cur)

    async def drain_commands(self):
        """Apply queued commands at a step boundary, acking each one."""
        pending, self.pending = self.pending, []
        for ws, msg in pending:
            req_id = None
            try:
                cmd = json.loads(msg)
                req_id = cmd.get("requestId")
                if cmd.get("type") != "command":
                    raise CommandError("expected a command message")
                self._apply(cmd.get("name"), cmd.get("args") or {})
                ack = {"type": "ack", "requestId": req_id, "ok": True}
            except (CommandError, KeyError, ValueError, TypeError,
                    IndexError) as e:
                ack = {"type": "ack", "requestId": req_id, "ok": False,
                       "error": str(e) or type(e).__name__}
            with contextlib.suppress(Exception):
                await ws.send_text(json.dumps(ack))

    # -- stepping loop -----------------------------------------------------

    async def run(self):
        period = 1.0 / self.pace
        next_due = time.perf_counter()
        while True:
            await self.drain_commands()
            if self.paused or not self.clients:
                # idle: commands still drain, time does not advance
                next_due = time.perf_counter()
                await asyncio.sleep(0.05)
                continue
            self.engine.next_step()
            await self.broadcast(self.frame())
            if self.max_speed:
                await asyncio.sleep(0)
                continue
            next_due += period
            delay = next_due - time.perf_counter()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                next_due = time.perf_counter()    # fell behind: no burst
                await asyncio.sleep(0)


def build_app(server: LiveServer):
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI()

    @app.get("/")
    def geometry():
        return server.geometry

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        server.clients.add(ws)
        try:
            while True:
                msg = await ws.receive_text()
                server.pending.append((ws, msg))
        except WebSocketDisconnect:
            pass
        finally:
            server.clients.discard(ws)

    @app.on_event("startup")
    async def start_loop():
        app.state.loop_task = asyncio.create_task(server.run())

    @app.on_event("shutdown")
    async def stop_loop():
        app.state.loop_task.cancel()
        with contextlib.suppress(asyncio.CancelledError):
            await app.state.loop_task
        server.engine.close()

    return app


def run_server(config_path, host: str = "127.0.0.1", port: int = 8765,
               pace: float = 10.0, max_speed: bool = False):
    import uvicorn

    server = LiveServer(config_path, pace=pace, max_speed=max_speed)
    app = build_app(server)
    uvicorn.run(app, host=host, port=port, log_level="warning")
