"""A denoiser living in a child process, spoken to over stdin/stdout.

Protocol version 1, all header lines ASCII and newline-terminated:

* handshake: the client sends ``HELLO 1`` and the server answers ``HELLO 1``;
* request: ``PREDICT h w k t alpha_bar`` followed by ``h*w*k`` little-endian
  float32 samples, band-major (one row-major h x w plane per band);
* response: ``OK`` followed by a payload of the same size, or
  ``ERR <message>``.

The client closes the server's stdin when done; the server should exit on
end of input. A reply that does not arrive within the timeout, or that is
not one of the frames above, raises :class:`ProtocolError`.
"""

from __future__ import annotations

import os
import select
import shlex
import subprocess
import sys

import numpy as np

PROTOCOL_VERSION = 1
MAX_HEADER = 4096


class ProtocolError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        where = f"step {step}: " if step is not None else ""
        super().__init__(where + message)
        self.step = step


def encode_payload(x: np.ndarray) -> bytes:
    return np.ascontiguousarray(np.asarray(x).transpose(2, 0, 1), dtype="<f4").tobytes()


def decode_payload(data: bytes, h: int, w: int, k: int) -> np.ndarray:
    planes = np.frombuffer(data, dtype="<f4").reshape(k, h, w)
    return np.ascontiguousarray(planes.transpose(1, 2, 0), dtype=np.float64)


class ExternalDenoiser:
    """Runs ``command`` once and forwards every noise prediction to it."""

    def __init__(self, command, timeout: float = 60.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError("empty denoiser command")
        self.timeout = float(timeout)
        self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        self._buf = b""
        try:
            self._send(f"HELLO {PROTOCOL_VERSION}\n".encode())
            line = self._readline(None)
        except ProtocolError:
            self.close()
            raise
        if line != f"HELLO {PROTOCOL_VERSION}":
            self.close()
            raise ProtocolError(f"handshake failed, server said {line!r}")

    def _send(self, data: bytes, step=None) -> None:
        try:
            self._proc.stdin.write(data)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"denoiser process closed its input ({exc})", step) from exc

    def _fill(self, step) -> None:
        fd = self._proc.stdout.fileno()
        ready, _, _ = select.select([fd], [], [], self.timeout)
        if not ready:
            raise ProtocolError(f"no reply within {self.timeout:g} s", step)
        chunk = os.read(fd, 1 << 16)
        if not chunk:
            raise ProtocolError("denoiser process exited", step)
        self._buf += chunk

    def _readline(self, step) -> str:
        while b"\n" not in self._buf:
            if len(self._buf) > MAX_HEADER:
                raise ProtocolError("header line too long", step)
            self._fill(step)
        line, self._buf = self._buf.split(b"\n", 1)
        try:
            return line.decode("ascii")
        except UnicodeDecodeError as exc:
            raise ProtocolError("header is not ASCII", step) from exc

    def _read_exact(self, n: int, step) -> bytes:
        while len(self._buf) < n:
            self._fill(step)
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def predict_noise(self, a_t, t, alpha_bar):
        a_t = np.asarray(a_t, dtype=np.float64)
        h, w, k = a_t.shape
        self._send(f"PREDICT {h} {w} {k} {int(t)} {float(alpha_bar)!r}\n".encode() + encode_payload(a_t), t)
        status = self._readline(t)
        if status.startswith("ERR"):
            raise ProtocolError(f"denoiser reported: {status[3:].strip()}", t)
        if status != "OK":
            raise ProtocolError(f"malformed reply header {status!r}", t)
        return decode_payload(self._read_exact(4 * h * w * k, t), h, w, k)

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        self._proc.stdout.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(predict, stdin=None, stdout=None) -> int:
    """Answer protocol requests with ``predict(a_t, t, alpha_bar)`` until end of input."""
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    if stdin.readline() != f"HELLO {PROTOCOL_VERSION}\n".encode():
        stdout.write(b"ERR unsupported protocol\n")
        stdout.flush()
        return 1
    stdout.write(f"HELLO {PROTOCOL_VERSION}\n".encode())
    stdout.flush()
    while True:
        line = stdin.readline()
        if not line:
            return 0
        parts = line.decode("ascii").split()
        if len(parts) != 6 or parts[0] != "PREDICT":
            stdout.write(b"ERR expected PREDICT h w k t alpha_bar\n")
            stdout.flush()
            return 1
        h, w, k, t = (int(p) for p in parts[1:5])
        alpha_bar = float(parts[5])
        a_t = decode_payload(stdin.read(4 * h * w * k), h, w, k)
        try:
            eps = np.asarray(predict(a_t, t, alpha_bar), dtype=np.float64)
            if eps.shape != a_t.shape:
                raise ValueError(f"prediction has shape {eps.shape}, expected {a_t.shape}")
        except Exception as exc:  # reported to the client, which aborts the run
            msg = " ".join(str(exc).split())
            stdout.write(f"ERR {msg}\n".encode())
        else:
            stdout.write(b"OK\n" + encode_payload(eps))
        stdout.flush()
