"""TCP bridge exposing the simulator as a remote reset/step environment.

Wire format: each message is a 4-byte big-endian length prefix followed by
one canonical UTF-8 JSON object (sorted keys, no whitespace). The server
handles a single client in lockstep; protocol version "kdnsim/1".

Message kinds (client -> server, reply kind in brackets):
  hello [hello]   {"id", "kind", "version"} -> space descriptors
  reset [reset_ack]  starts a fresh episode, returns the first observation
  step  [step_ack]   {"id", "kind", "ue_id", "action"} -> observation after
                     the next tick's mobility, reward, done, info (the info
                     map carries the acted UE's post-action telemetry, which
                     is the learning target state)
  close (no reply)   ends the session
Any reply may instead be {"kind": "error", "id", "message"}. Malformed
frames and version mismatches get an error reply and the connection closes;
protocol-state errors (step before reset, step after done, wrong ue_id)
keep the connection open. Message ids must strictly increase.
"""

from __future__ import annotations

import json
import logging
import socket
import struct

from .engine import EpisodeRunner
from .errors import ProtocolError
from .qlearning import Action, FEATURE_ORDER, N_ACTIONS, TelemetrySample
from .scenario import Scenario

log = logging.getLogger("kdnsim.bridge")

PROTOCOL_VERSION = "kdnsim/1"
MAX_FRAME_BYTES = 1 << 20
_HEADER = struct.Struct(">I")

OBSERVATION_RANGES = {
    "packet_loss": [0.0, 1.0],
    "latency_ms": [0.0, None],
    "throughput_bps": [0.0, None],
    "speed_mps": [0.0, None],
    "distance_m": [0.0, None],
    "load_ratio": [0.0, None],
}


def encode_frame(obj: dict) -> bytes:
    """Canonical frame bytes: length prefix + sorted-key compact JSON."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(len(payload)) + payload


def decode_frame(frame: bytes) -> dict:
    """Inverse of encode_frame; round-trips canonical frames byte-exactly."""
    if len(frame) < _HEADER.size:
        raise ProtocolError("frame shorter than its header")
    (length,) = _HEADER.unpack_from(frame)
    if len(frame) != _HEADER.size + length:
        raise ProtocolError("frame length does not match its header")
    try:
        obj = json.loads(frame[_HEADER.size:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad JSON payload: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("payload must be a JSON object")
    return obj


def send_message(sock: socket.socket, obj: dict) -> None:
    sock.sendall(encode_frame(obj))


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def recv_message(sock: socket.socket) -> dict | None:
    """Read one frame; None on clean EOF, ProtocolError on garbage."""
    header = _recv_exact(sock, _HEADER.size)
    if header is None:
        return None
    (length,) = _HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {length} bytes exceeds the limit")
    payload = _recv_exact(sock, length)
    if payload is None:
        raise ProtocolError("connection closed mid-frame")
    return decode_frame(header + payload)


def observation_payload(sample: TelemetrySample) -> dict:
    return {
        "ue_id": sample.ue_id,
        "packet_loss": sample.packet_loss,
        "latency_ms": sample.latency,
        "throughput_bps": sample.throughput,
        "speed_mps": sample.speed,
        "distance_m": sample.distance_to_serving,
        "load_ratio": sample.serving_load_ratio,
    }


def sample_from_payload(obs: dict) -> TelemetrySample:
    """Rebuild a TelemetrySample from its wire form (client-side helper)."""
    return TelemetrySample(
        ue_id=obs["ue_id"],
        packet_loss=obs["packet_loss"],
        latency=obs["latency_ms"],
        throughput=obs["throughput_bps"],
        speed=obs["speed_mps"],
        distance_to_serving=obs["distance_m"],
        serving_load_ratio=obs["load_ratio"],
    )


class BridgeServer:
    """Single-client lockstep server around EpisodeRunner."""

    def __init__(self, scenario: Scenario, port: int = 0, host: str = "127.0.0.1"):
        self.scenario = scenario
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(1)
        self.port = self._sock.getsockname()[1]

    def close(self) -> None:
        self._sock.close()

    def serve_once(self) -> None:
        """Accept one client and run its session until close or EOF."""
        conn, addr = self._sock.accept()
        log.info("bridge client connected from %s:%s", *addr)
        try:
            self._session(conn)
        finally:
            conn.close()
            log.info("bridge client disconnected")

    def _session(self, conn: socket.socket) -> None:
        runner: EpisodeRunner | None = None
        episode = -1
        last_id = 0
        greeted = False

        def fail(msg_id: int, message: str) -> None:
            send_message(conn, {"id": msg_id, "kind": "error", "message": message})

        while True:
            try:
                msg = recv_message(conn)
            except ProtocolError as exc:
                fail(last_id + 1, str(exc))
                return
            if msg is None:
                return

            msg_id = msg.get("id")
            kind = msg.get("kind")
            if not isinstance(msg_id, int) or msg_id <= last_id:
                fail(last_id + 1, "message ids must be strictly increasing integers")
                return
            last_id = msg_id

            if kind == "hello":
                if msg.get("version") != PROTOCOL_VERSION:
                    fail(msg_id, f"unsupported protocol version, want {PROTOCOL_VERSION}")
                    return
                greeted = True
                send_message(conn, {
                    "id": msg_id,
                    "kind": "hello",
                    "version": PROTOCOL_VERSION,
                    "observations": list(FEATURE_ORDER),
                    "observation_ranges": OBSERVATION_RANGES,
                    "actions": [a.name.lower() for a in Action],
                    "ue_count": self.scenario.ue_count,
                    "ticks_per_episode": self.scenario.hp.ticks_per_episode,
                })
            elif kind == "reset":
                if not greeted:
                    fail(msg_id, "hello required before reset")
                    continue
                episode += 1
                runner = EpisodeRunner(self.scenario, episode)
                if runner.done:  # zero-tick episode
                    send_message(conn, {"id": msg_id, "kind": "reset_ack",
                                        "observation": None, "tick": 0,
                                        "episode": episode, "done": True})
                    continue
                obs = runner.begin_tick()
                send_message(conn, {"id": msg_id, "kind": "reset_ack",
                                    "observation": observation_payload(obs),
                                    "tick": runner.tick, "episode": episode,
                                    "done": False})
            elif kind == "step":
                if runner is None:
                    fail(msg_id, "reset required before step")
                    continue
                if runner.done:
                    fail(msg_id, "episode finished; reset to continue")
                    continue
                action_ord = msg.get("action")
                if not isinstance(action_ord, int) or not 0 <= action_ord < N_ACTIONS:
                    fail(msg_id, f"action must be an integer in [0, {N_ACTIONS})")
                    return
                if msg.get("ue_id") != runner.acting_ue:
                    fail(msg_id, f"expected ue_id {runner.acting_ue} (round-robin order)")
                    continue
                tick = runner.tick
                reward, post = runner.finish_tick(Action(action_ord))
                done = runner.done
                next_obs = None if done else observation_payload(runner.begin_tick())
                send_message(conn, {
                    "id": msg_id,
                    "kind": "step_ack",
                    "observation": next_obs,
                    "reward": reward,
                    "done": done,
                    "info": {
                        "tick": tick,
                        "ue_id": post.ue_id,
                        "post_action": observation_payload(post),
                        "episode": episode,
                    },
                })
            elif kind == "close":
                return
            else:
                fail(msg_id, f"unknown message kind '{kind}'")
                return


def serve(scenario: Scenario, port: int, host: str = "127.0.0.1") -> int:
    """Bind, serve one client session, and return the port that was used."""
    server = BridgeServer(scenario, port, host)
    try:
        log.info("bridge listening on %s:%d", host, server.port)
        server.serve_once()
    finally:
        server.close()
    return server.port


class BridgeClient:
    """Minimal lockstep client used by tests and external agents."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._next_id = 1

    def close(self) -> None:
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def request(self, kind: str, **fields) -> dict:
        msg = {"id": self._next_id, "kind": kind, **fields}
        self._next_id += 1
        send_message(self._sock, msg)
        reply = recv_message(self._sock)
        if reply is None:
            raise ProtocolError("server closed the connection")
        return reply

    def hello(self) -> dict:
        return self.request("hello", version=PROTOCOL_VERSION)

    def reset(self) -> dict:
        return self.request("reset")

    def step(self, ue_id: int, action: int) -> dict:
        return self.request("step", ue_id=ue_id, action=action)

    def send_close(self) -> None:
        send_message(self._sock, {"id": self._next_id, "kind": "close"})
        self._next_id += 1
