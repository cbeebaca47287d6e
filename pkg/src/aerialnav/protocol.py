"""Newline-delimited JSON policy protocol over a stream socket.

Request::

    {"type": "decide", "seq": N, "instruction": S, "pose": [x, y, z, yaw],
     "time": T, "depth": <optional base64 16-bit PGM>}

Response::

    {"type": "decision", "seq": N, "waypoint": [x, y, z], "yaw": R,
     "complete": B, "replan": B}
"""
from __future__ import annotations

import base64
import json
import logging
import math
import socket
import socketserver
import threading

from .errors import ConnectionLost, ProtocolError
from .geometry import Pose4D
from .policy import NavDecision, NoDecision, Observation, OraclePolicy
from .raster import decode_pgm16, encode_pgm16
from .world import DepthImage

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 2.0
MAX_FRAME = 16 * 1024 * 1024


def _frame(doc) -> bytes:
    return json.dumps(doc, separators=(",", ":"), allow_nan=False).encode() + b"\n"


def encode_request(obs: Observation, seq: int, include_depth: bool = False) -> bytes:
    doc = {"type": "decide", "seq": int(seq), "instruction": obs.instruction,
           "pose": obs.pose.as_list(), "time": float(obs.episode_time)}
    if include_depth and obs.depth is not None:
        doc["depth"] = base64.b64encode(encode_pgm16(obs.depth.to_millimeters())).decode("ascii")
    return _frame(doc)


def _parse(line: bytes, expected_type: str) -> dict:
    try:
        doc = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed frame: {exc}") from None
    if not isinstance(doc, dict) or doc.get("type") != expected_type:
        raise ProtocolError(f"expected a {expected_type!r} frame")
    if not isinstance(doc.get("seq"), int) or isinstance(doc.get("seq"), bool):
        raise ProtocolError("seq must be an integer")
    return doc


def _finite_list(doc, key, n):
    value = doc.get(key)
    if (not isinstance(value, list) or len(value) != n
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise ProtocolError(f"{key} must be a list of {n} numbers")
    value = [float(v) for v in value]
    if not all(math.isfinite(v) for v in value):
        raise ProtocolError(f"{key} must be finite")
    return value


def decode_request(line: bytes) -> tuple[int, Observation]:
    doc = _parse(line, "decide")
    pose = Pose4D(*_finite_list(doc, "pose", 4))
    depth = None
    if doc.get("depth") is not None:
        try:
            depth = DepthImage.from_millimeters(decode_pgm16(base64.b64decode(doc["depth"], validate=True)))
        except (ValueError, TypeError) as exc:
            raise ProtocolError(f"bad depth payload: {exc}") from None
    time = doc.get("time", 0.0)
    if not isinstance(time, (int, float)) or not math.isfinite(time):
        raise ProtocolError("time must be finite")
    return doc["seq"], Observation(pose, depth, str(doc.get("instruction", "")), float(time))


def encode_response(decision: NavDecision, seq: int | None = None) -> bytes:
    return _frame({"type": "decision", "seq": int(decision.seq if seq is None else seq),
                   "waypoint": list(decision.waypoint), "yaw": decision.yaw,
                   "complete": bool(decision.complete), "replan": bool(decision.replan)})


def decode_response(line: bytes, expected_seq: int | None = None) -> NavDecision:
    doc = _parse(line, "decision")
    if expected_seq is not None and doc["seq"] != expected_seq:
        raise ProtocolError(f"seq mismatch: expected {expected_seq}, got {doc['seq']}")
    waypoint = _finite_list(doc, "waypoint", 3)
    yaw = doc.get("yaw")
    if not isinstance(yaw, (int, float)) or isinstance(yaw, bool) or not math.isfinite(yaw):
        raise ProtocolError("yaw must be finite")
    for key in ("complete", "replan"):
        if not isinstance(doc.get(key, False), bool):
            raise ProtocolError(f"{key} must be a boolean")
    try:
        return NavDecision(waypoint, float(yaw), doc.get("complete", False), doc.get("replan", False), doc["seq"])
    except ValueError as exc:
        raise ProtocolError(str(exc)) from None


class PolicyConnection:
    """Client side of one policy stream."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buffer = b""
        self._abandoned = set()  # seqs whose replies timed out

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 5.0) -> "PolicyConnection":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectionLost(f"cannot reach policy at {host}:{port}: {exc}") from None
        return cls(sock)

    def close(self):
        self.sock.close()

    def send(self, frame: bytes):
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise ConnectionLost(str(exc)) from None

    def read_line(self, timeout: float) -> bytes | None:
        """Next frame, or None on timeout."""
        self.sock.settimeout(timeout)
        while b"\n" not in self._buffer:
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                return None
            except OSError as exc:
                raise ConnectionLost(str(exc)) from None
            if not chunk:
                raise ConnectionLost("policy closed the connection")
            self._buffer += chunk
            if len(self._buffer) > MAX_FRAME:
                raise ProtocolError("frame exceeds size limit")
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line

    def exchange(self, request: bytes, seq: int, timeout: float):
        self.send(request)
        while True:
            line = self.read_line(timeout)
            if line is None:
                self._abandoned.add(seq)
                return NoDecision
            doc_seq = _parse(line, "decision")["seq"]
            if doc_seq in self._abandoned:
                self._abandoned.discard(doc_seq)
                continue
            return decode_response(line, seq)


def remote_decide(obs: Observation, connection: PolicyConnection, timeout: float = DEFAULT_TIMEOUT,
                  seq: int = 0, include_depth: bool = False):
    """One request/response round trip; ``NoDecision`` if nothing arrives within ``timeout``."""
    return connection.exchange(encode_request(obs, seq, include_depth), seq, timeout)


class RemotePolicy:
    def __init__(self, connection: PolicyConnection, timeout: float = DEFAULT_TIMEOUT, include_depth: bool = False):
        self.connection = connection
        self.timeout = timeout
        self.include_depth = include_depth
        self.seq = 0

    def decide(self, obs: Observation):
        self.seq += 1
        return remote_decide(obs, self.connection, self.timeout, self.seq, self.include_depth)


# ---------------------------------------------------------------------------
# loopback server

class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        policy = OraclePolicy(self.server.scenario)
        for line in self.rfile:
            line = line.strip()
            if not line:
                continue
            try:
                seq, obs = decode_request(line)
            except ProtocolError as exc:
                log.warning("dropping bad request: %s", exc)
                continue
            if self.server.delay:
                threading.Event().wait(self.server.delay)
            decision = policy.decide(obs)
            try:
                self.wfile.write(encode_response(decision, seq))
            except OSError:
                return


class DummyPolicyServer(socketserver.ThreadingTCPServer):
    """Oracle policy behind the wire protocol, for loopback tests."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, scenario, host="127.0.0.1", port=0, delay: float = 0.0):
        self.scenario = scenario
        self.delay = delay
        super().__init__((host, port), _Handler)

    @property
    def address(self):
        return self.server_address[:2]

    def start(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread
