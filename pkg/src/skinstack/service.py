"""Streaming service: live pipeline, client broadcast, record and replay.

One pipeline thread owns the rig, the filters and the profile; clients get
newline-delimited JSON on the main port and, optionally, the raw 30-byte
packet stream on a second port.  Client commands are queued onto the
pipeline thread, so zeroing and profile swaps never race the filter chain.
Every command is answered by exactly one ack or error carrying its request
id.  Slow clients lose whole messages (drop-oldest), never partial ones.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import acquisition, calibration, runtime
from .frames import ForceState, RawFrame
from .sim import rig as simrig

RECORDING_SCHEMA_VERSION = 1
PROTOCOL_VERSION = 1

CHUNK_FRAMES = 25  # 50 ms of frames per pipeline tick


class ServiceError(RuntimeError):
    pass


# --- recording --------------------------------------------------------------


class Recorder:
    """Append-only recording: one JSON metadata line, then raw packets."""

    def __init__(self, path: str | Path, metadata: dict | None = None):
        self.path = Path(path)
        meta = {
            "schema_version": RECORDING_SCHEMA_VERSION,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "frame_hz": simrig.FRAME_HZ,
            **(metadata or {}),
        }
        self._fh = self.path.open("wb")
        self._fh.write(json.dumps(meta).encode() + b"\n")
        self.frames_written = 0

    def append(self, frame: RawFrame) -> None:
        self._fh.write(acquisition.encode_frame(frame))
        self.frames_written += 1

    def close(self) -> dict:
        self._fh.close()
        return {"path": str(self.path), "frames": self.frames_written}


def read_recording(path: str | Path) -> tuple[dict, list[RawFrame]]:
    """Load a recording; corruption is reported with its first byte offset."""
    blob = Path(path).read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise ServiceError(f"{path}: missing metadata line")
    try:
        metadata = json.loads(blob[:newline])
    except json.JSONDecodeError as exc:
        raise ServiceError(f"{path}: bad metadata line: {exc}") from exc
    if metadata.get("schema_version") != RECORDING_SCHEMA_VERSION:
        raise ServiceError(f"{path}: unsupported recording schema")
    body = blob[newline + 1 :]
    frames: list[RawFrame] = []
    offset = 0
    while offset < len(body):
        chunk = body[offset : offset + acquisition.PACKET_SIZE]
        if len(chunk) < acquisition.PACKET_SIZE:
            raise ServiceError(f"{path}: truncated packet at byte {newline + 1 + offset}")
        try:
            frames.append(acquisition.decode_frame(chunk))
        except acquisition.FramingError as exc:
            raise ServiceError(
                f"{path}: corrupt packet at byte {newline + 1 + offset}: {exc}"
            ) from exc
        offset += acquisition.PACKET_SIZE
    return metadata, frames


def replay_frames(path: str | Path, speed: float = 1.0):
    """Yield recorded frames, pacing wall clock by original timestamps / speed.

    speed <= 0 streams as fast as possible.
    """
    _, frames = read_recording(path)
    if not frames:
        return
    if speed <= 0:
        yield from frames
        return
    start_wall = time.monotonic()
    start_ts = frames[0].timestamp_us
    for frame in frames:
        due = start_wall + (frame.timestamp_us - start_ts) * 1e-6 / speed
        delay = due - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        yield frame


# --- stream messages ----------------------------------------------------------


def state_message(state: ForceState, seq: int) -> dict:
    return {
        "kind": "force_state",
        "seq": seq,
        "timestamp_us": state.timestamp_us,
        "payload": state.as_dict(),
    }


def event_message(event: runtime.PipelineEvent, seq: int) -> dict:
    return {
        "kind": "event",
        "seq": seq,
        "timestamp_us": event.timestamp_us,
        "payload": {"event": event.kind, **event.payload},
    }


def ack_message(request_id, payload: dict | None = None) -> dict:
    return {"kind": "ack", "request_id": request_id, "payload": payload or {}}


def error_message(request_id, reason: str) -> dict:
    return {"kind": "error", "request_id": request_id, "payload": {"reason": reason}}


# --- clients --------------------------------------------------------------------


class _Client:
    """Writer thread plus bounded queue for one connection."""

    def __init__(self, sock: socket.socket, address, binary: bool = False, maxlen: int = 256):
        self.sock = sock
        self.address = address
        self.binary = binary
        self.queue: deque = deque(maxlen=maxlen)
        self.dropped = 0
        self.rate_limit_hz: float | None = None
        self._last_sent_us = -(10**12)
        self._ready = threading.Event()
        self.alive = True
        self._writer = threading.Thread(target=self._write_loop, daemon=True)
        self._writer.start()

    def send(self, message: dict | bytes, timestamp_us: int | None = None) -> None:
        if not self.alive:
            return
        if (
            timestamp_us is not None
            and self.rate_limit_hz
            and (timestamp_us - self._last_sent_us) < 1e6 / self.rate_limit_hz - 1
        ):
            return
        if timestamp_us is not None:
            self._last_sent_us = timestamp_us
        if len(self.queue) == self.queue.maxlen:
            self.dropped += 1
        self.queue.append(message)
        self._ready.set()

    def _write_loop(self) -> None:
        while self.alive:
            if not self.queue:
                self._ready.wait(0.1)
                self._ready.clear()
                continue
            message = self.queue.popleft()
            data = message if isinstance(message, bytes) else (json.dumps(message) + "\n").encode()
            try:
                self.sock.sendall(data)
            except OSError:
                self.close()

    def close(self) -> None:
        self.alive = False
        try:
            self.sock.close()
        except OSError:
            pass


# --- the service -------------------------------------------------------------------


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 0  # 0 -> ephemeral
    raw_port: int | None = None
    realtime: bool = True  # pace the rig against the wall clock
    broadcast_hz: float = 100.0


class SensorService:
    """Owns rig + pipeline and serves calibrated state to any number of clients."""

    def __init__(
        self,
        script,
        profile: calibration.CalibrationProfile,
        config: ServiceConfig | None = None,
        thermostat: runtime.ThermostatConfig | None = None,
        params: runtime.RuntimeParams | None = None,
    ):
        self.config = config or ServiceConfig()
        self.script = script
        self.profile = profile
        self.params = params or runtime.RuntimeParams()
        self.pipeline = runtime.LivePipeline(
            profile,
            gamma_window=self.params.build_gamma_window(),
            material_tracker=self.params.build_material_tracker(),
        )
        self.thermostat = thermostat
        self.rig = simrig.build_rig(script)
        self._events_by_frame: dict[int, list] = {}
        for ev in script.events:
            frame = int(round(ev.t * simrig.FRAME_HZ))
            self._events_by_frame.setdefault(frame, []).append(ev)
        self._total_frames = int(round(script.duration_s * simrig.FRAME_HZ))

        self._commands: deque = deque()
        self._clients: list[_Client] = []
        self._raw_clients: list[_Client] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._recorder: Recorder | None = None
        self._state_seq = 0
        self._last_state: ForceState | None = None
        self._listener: socket.socket | None = None
        self._raw_listener: socket.socket | None = None
        self.bound_port: int | None = None
        self.bound_raw_port: int | None = None

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> None:
        self._listener = self._listen(self.config.port)
        self.bound_port = self._listener.getsockname()[1]
        self._threads.append(self._spawn(self._accept_loop, self._listener, False))
        if self.config.raw_port is not None:
            self._raw_listener = self._listen(self.config.raw_port)
            self.bound_raw_port = self._raw_listener.getsockname()[1]
            self._threads.append(self._spawn(self._accept_loop, self._raw_listener, True))
        self._threads.append(self._spawn(self._pipeline_loop))

    def stop(self) -> None:
        self._stop.set()
        for listener in (self._listener, self._raw_listener):
            if listener is not None:
                try:
                    listener.close()
                except OSError:
                    pass
        for thread in self._threads:
            thread.join(timeout=2.0)
        with self._lock:
            for client in self._clients + self._raw_clients:
                client.close()
        if self._recorder is not None:
            self._recorder.close()
            self._recorder = None

    def _listen(self, port: int) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((self.config.host, port))
        sock.listen(8)
        sock.settimeout(0.2)
        return sock

    def _spawn(self, target, *args) -> threading.Thread:
        thread = threading.Thread(target=target, args=args, daemon=True)
        thread.start()
        return thread

    # -- sockets ----------------------------------------------------------------

    def _accept_loop(self, listener: socket.socket, binary: bool) -> None:
        while not self._stop.is_set():
            try:
                sock, address = listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            client = _Client(sock, address, binary=binary)
            with self._lock:
                (self._raw_clients if binary else self._clients).append(client)
            if not binary:
                self._spawn(self._read_loop, client)

    def _read_loop(self, client: _Client) -> None:
        buf = b""
        sock = client.sock
        sock.settimeout(0.2)
        while not self._stop.is_set() and client.alive:
            try:
                data = sock.recv(4096)
            except socket.timeout:
                continue
            except OSError:
                break
            if not data:
                break
            buf += data
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if line.strip():
                    self._commands.append((client, line))
        client.close()

    # -- pipeline ------------------------------------------------------------------

    def _pipeline_loop(self) -> None:
        frame_dt = 1.0 / simrig.FRAME_HZ
        cursor = 0
        next_wall = time.monotonic()
        while not self._stop.is_set() and cursor < self._total_frames:
            self._drain_commands()
            for frame_index in sorted(self._events_by_frame):
                if cursor <= frame_index < cursor + CHUNK_FRAMES:
                    for ev in self._events_by_frame.pop(frame_index):
                        simrig._apply_event(self.rig, ev.kind, ev.params)
            if self.thermostat is not None and self._last_state is not None:
                duty = runtime.thermostat_duty(self._last_state.temperature, self.thermostat)
                self.rig.set_heater_power(duty * self.thermostat.max_power_w)
            n = min(CHUNK_FRAMES, self._total_frames - cursor)
            chunk = self.rig.advance(n)
            cursor += n
            frames = acquisition.frames_from_slots(
                chunk.channels.reshape(-1),
                start_seq=cursor - n,
                start_timestamp_us=int(round(chunk.t[0] * 1e6)),
            )
            for frame in frames:
                if self._recorder is not None:
                    self._recorder.append(frame)
                self._broadcast_raw(frame)
                state = self.pipeline.push_raw(frame)
                if state is not None:
                    self._last_state = state
                    self._broadcast_state(state)
            for event in self.pipeline.poll_events():
                self._broadcast(event_message(event, self._state_seq))
            if self.config.realtime:
                next_wall += n * frame_dt
                delay = next_wall - time.monotonic()
                if delay > 0:
                    time.sleep(delay)

    def _broadcast_state(self, state: ForceState) -> None:
        self._state_seq += 1
        message = state_message(state, self._state_seq)
        with self._lock:
            for client in self._clients:
                client.send(message, timestamp_us=state.timestamp_us)

    def _broadcast(self, message: dict) -> None:
        with self._lock:
            for client in self._clients:
                client.send(message)

    def _broadcast_raw(self, frame: RawFrame) -> None:
        if not self._raw_clients:
            return
        packet = acquisition.encode_frame(frame)
        with self._lock:
            for client in self._raw_clients:
                client.send(packet)

    # -- commands -----------------------------------------------------------------

    def _drain_commands(self) -> None:
        while self._commands:
            client, line = self._commands.popleft()
            try:
                doc = json.loads(line)
            except json.JSONDecodeError:
                client.send(error_message(None, "malformed_json"))
                continue
            request_id = doc.get("id")
            try:
                payload = self._execute(doc, client)
                client.send(ack_message(request_id, payload))
            except Exception as exc:  # noqa: BLE001 - reason goes to the client
                client.send(error_message(request_id, str(exc)))

    def _execute(self, doc: dict, client: _Client) -> dict:
        if doc.get("kind") != "command":
            raise ServiceError("unknown_command")
        command = doc.get("command")
        args = doc.get("args", {})
        if command == "zero_cal":
            group = args.get("group", "")
            offsets = self.pipeline.zero(group)
            return {"group": group, "offsets_v": [float(v) for v in offsets]}
        if command == "set_thermostat":
            cfg = runtime.ThermostatConfig(
                stop_c=float(args["stop_c"]), heat_c=float(args["heat_c"])
            )
            self.thermostat = cfg
            return {"stop_c": cfg.stop_c, "heat_c": cfg.heat_c}
        if command == "record":
            action = args.get("action")
            if action == "start":
                if self._recorder is not None:
                    raise ServiceError("already recording")
                path = args.get("path") or f"recording-{int(time.time())}.skr"
                self._recorder = Recorder(
                    path, {"scenario": self.script.name, "profile_created": self.profile.created_at}
                )
                return {"recording": str(self._recorder.path)}
            if action == "stop":
                if self._recorder is None:
                    raise ServiceError("not recording")
                summary = self._recorder.close()
                self._recorder = None
                return summary
            raise ServiceError("record action must be start or stop")
        if command == "load_profile":
            profile = calibration.CalibrationProfile.load(args["path"])
            self.profile = profile
            self.pipeline = runtime.LivePipeline(
                profile,
                gamma_window=self.params.build_gamma_window(),
                material_tracker=self.params.build_material_tracker(),
            )
            return {"loaded": args["path"]}
        if command == "inject_interference":
            enabled = bool(args.get("enabled", True))
            self.rig.set_interference(enabled)
            return {"enabled": enabled}
        if command == "set_rate":
            hz = float(args["hz"])
            if not 0 < hz <= self.config.broadcast_hz:
                raise ServiceError(f"rate must be in (0, {self.config.broadcast_hz}]")
            client.rate_limit_hz = hz
            return {"hz": hz}
        raise ServiceError("unknown_command")
