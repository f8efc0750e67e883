"""TCP client for the environment server, plus a helper that launches one.

The trainer talks to the simulator exclusively through the length-prefixed
JSON frame protocol: handshake, reset, step, close.
"""

from __future__ import annotations

import json
import socket
import struct
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

PROTOCOL_VERSION = 1


class ProtocolError(RuntimeError):
    pass


def _read_frame(sock) -> dict:
    header = b""
    while len(header) < 4:
        chunk = sock.recv(4 - len(header))
        if not chunk:
            raise ProtocolError("server closed the connection")
        header += chunk
    (length,) = struct.unpack(">I", header)
    body = b""
    while len(body) < length:
        chunk = sock.recv(length - len(body))
        if not chunk:
            raise ProtocolError("server closed the connection mid-frame")
        body += chunk
    return json.loads(body.decode("utf-8"))


def _write_frame(sock, payload: dict):
    data = json.dumps(payload, separators=(",", ":")).encode("utf-8")
    sock.sendall(struct.pack(">I", len(data)) + data)


class EnvClient:
    """One remote environment over one socket."""

    def __init__(self, host: str, port: int, timeout: float = 60.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.layout = None

    def handshake(self) -> dict:
        _write_frame(self.sock, {"cmd": "handshake", "version": PROTOCOL_VERSION})
        reply = _read_frame(self.sock)
        if not reply.get("ok"):
            raise ProtocolError(reply.get("error", "handshake rejected"))
        self.layout = reply
        return reply

    def _split_obs(self, flat_lists):
        segments = self.layout["obs_segments"]
        out = []
        for flat in flat_lists:
            arr = np.asarray(flat, dtype=np.float32)
            parts = {}
            offset = 0
            for seg in segments:
                parts[seg["name"]] = arr[offset : offset + seg["size"]]
                offset += seg["size"]
            out.append(parts)
        return out

    def reset(self, seed: int):
        _write_frame(self.sock, {"cmd": "reset", "seed": int(seed)})
        reply = _read_frame(self.sock)
        if not reply.get("ok"):
            raise ProtocolError(reply.get("error", "reset failed"))
        return self._split_obs(reply["obs"]), reply.get("info", {})

    def step(self, actions):
        payload = [[float(v) for v in np.asarray(a).reshape(-1)] for a in actions]
        _write_frame(self.sock, {"cmd": "step", "actions": payload})
        reply = _read_frame(self.sock)
        if not reply.get("ok"):
            raise ProtocolError(reply.get("error", "step failed"))
        return (
            self._split_obs(reply["obs"]),
            float(reply["reward"]),
            bool(reply["terminated"]),
            bool(reply["truncated"]),
            reply.get("info", {}),
        )

    def close(self):
        try:
            _write_frame(self.sock, {"cmd": "close"})
            _read_frame(self.sock)
        except (OSError, ProtocolError):
            pass
        self.sock.close()


def free_port() -> int:
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    return port


class ServerProcess:
    """Launches `swarmexplore --serve` as a subprocess for one training run."""

    def __init__(self, env_toml: str, port: int = None):
        self.port = port or free_port()
        self._dir = tempfile.TemporaryDirectory(prefix="swarmtrainer-")
        config_path = Path(self._dir.name) / "env.toml"
        config_path.write_text(env_toml)
        self.proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "swarmexplore.harness",
                "--config",
                str(config_path),
                "--serve",
                "--port",
                str(self.port),
                "--log-dir",
                str(Path(self._dir.name) / "logs"),
            ],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.PIPE,
        )

    def connect(self, attempts: int = 200) -> EnvClient:
        for _ in range(attempts):
            if self.proc.poll() is not None:
                raise ProtocolError(
                    "server exited early: " + self.proc.stderr.read().decode()
                )
            try:
                client = EnvClient("127.0.0.1", self.port)
                client.handshake()
                return client
            except OSError:
                time.sleep(0.05)
        raise ProtocolError("could not connect to the environment server")

    def stop(self):
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
        self._dir.cleanup()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()
