"""Client for external matcher processes speaking JSON lines over stdio.

Protocol: one request object per line on stdin, one response per line on
stdout. Requests carry image paths (pairs are large; inline bytes would
bloat the stream) plus the canonical side and keypoint budget. Responses
echo the request_id and carry either a correspondences list of
[qx, qy, cx, cy, score] rows in the canonical frame, or an error string.
A single request is in flight per process; model loading happens once at
process startup, mirroring per-query timing that excludes it.
"""

from __future__ import annotations

import json
import queue
import subprocess
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BackendError
from .features import CorrespondenceSet, MatcherConfig
from .raster import save_image

DEFAULT_TIMEOUT_S = 60.0


class BridgeMatcher:
    """Owns one bridge subprocess and serializes requests to it."""

    def __init__(self, argv: list[str], timeout_s: float = DEFAULT_TIMEOUT_S):
        if not argv:
            raise BackendError("bridge command line is empty")
        self.argv = list(argv)
        self.timeout_s = timeout_s
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._lock = threading.Lock()

    def _ensure_started(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            return
        try:
            self._proc = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendError(f"cannot start bridge {self.argv!r}: {exc}") from exc

        def pump(proc, q):
            for line in proc.stdout:
                q.put(line)
            q.put(None)  # EOF marker

        self._lines = queue.Queue()
        threading.Thread(target=pump, args=(self._proc, self._lines), daemon=True).start()

    def _roundtrip_line(self, line: str) -> dict:
        self._ensure_started()
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(f"bridge process went away: {exc}") from exc
        try:
            raw = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            raise BackendError(f"bridge response timed out after {self.timeout_s}s")
        if raw is None:
            raise BackendError("bridge closed stdout before responding")
        try:
            resp = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise BackendError(f"bridge wrote a non-JSON line: {raw[:200]!r}") from exc
        if not isinstance(resp, dict):
            raise BackendError("bridge response is not an object")
        return resp

    def request(self, payload: dict) -> dict:
        with self._lock:  # one request in flight per process
            return self._roundtrip_line(json.dumps(payload))

    def match_files(self, q_path, c_path, image_side: int, max_keypoints: int) -> CorrespondenceSet:
        request_id = uuid.uuid4().hex
        resp = self.request({
            "request_id": request_id,
            "query_image_path": str(q_path),
            "candidate_image_path": str(c_path),
            "image_side": int(image_side),
            "max_keypoints": int(max_keypoints),
        })
        if resp.get("request_id") != request_id:
            raise BackendError(
                f"bridge echoed request_id {resp.get('request_id')!r}, expected {request_id!r}"
            )
        if "error" in resp and resp["error"] is not None:
            raise BackendError(f"bridge error: {resp['error']}")
        rows = resp.get("correspondences")
        if not isinstance(rows, list):
            raise BackendError("bridge response lacks a correspondences list")
        if not rows:
            return CorrespondenceSet.empty("bridge")
        arr = np.asarray(rows, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 5 or not np.all(np.isfinite(arr)):
            raise BackendError("bridge correspondences must be finite [qx,qy,cx,cy,score] rows")
        return CorrespondenceSet(
            query_pts=arr[:, 0:2].copy(),
            cand_pts=arr[:, 2:4].copy(),
            scores=arr[:, 4].copy(),
            source="bridge",
        )

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
        self._proc = None


def bridge_backend(argv: list[str], timeout_s: float = DEFAULT_TIMEOUT_S):
    """Adapt a bridge process to the in-process matcher backend contract."""
    client = BridgeMatcher(argv, timeout_s=timeout_s)

    def backend(q: np.ndarray, c: np.ndarray, cfg: MatcherConfig) -> CorrespondenceSet:
        with tempfile.TemporaryDirectory(prefix="earthmatch-bridge-") as tmp:
            q_path = Path(tmp) / "query.png"
            c_path = Path(tmp) / "candidate.png"
            save_image(q_path, q)
            save_image(c_path, c)
            return client.match_files(q_path, c_path, cfg.image_side, cfg.max_keypoints)

    backend.client = client  # exposed so callers can close the process
    return backend


@dataclass
class ConformanceReport:
    passed: bool
    violations: list[str] = field(default_factory=list)
    latencies_s: dict[str, float] = field(default_factory=dict)


def _fixture_images(side: int) -> dict[str, np.ndarray]:
    from .synth import generate_texture

    a = generate_texture(side, seed=11)
    b = generate_texture(side, seed=23)
    return {
        "identity": a,
        "rotated": np.rot90(a).copy(),
        "negative": b,
    }


def conformance_check(argv: list[str], image_side: int = 256, max_keypoints: int = 512) -> ConformanceReport:
    """Exercise a bridge executable against synthetic fixtures and validate
    the protocol: schema, request_id echo, coordinate bounds, latency, and
    malformed-line resilience."""
    report = ConformanceReport(passed=True)
    client = BridgeMatcher(argv)
    fixtures = _fixture_images(image_side)

    def violation(msg: str) -> None:
        report.passed = False
        report.violations.append(msg)

    try:
        with tempfile.TemporaryDirectory(prefix="earthmatch-conf-") as tmp:
            qp = Path(tmp) / "q.png"
            save_image(qp, fixtures["identity"])
            for name, cand in fixtures.items():
                cp = Path(tmp) / f"c_{name}.png"
                save_image(cp, cand)
                t0 = time.perf_counter()
                try:
                    cs = client.match_files(qp, cp, image_side, max_keypoints)
                except BackendError as exc:
                    violation(f"{name}: {exc}")
                    continue
                dt = time.perf_counter() - t0
                report.latencies_s[name] = round(dt, 3)
                if dt >= DEFAULT_TIMEOUT_S:
                    violation(f"{name}: latency {dt:.1f}s exceeds budget")
                for label, pts in (("query", cs.query_pts), ("candidate", cs.cand_pts)):
                    if len(pts) and (np.any(pts < 0) or np.any(pts >= image_side)):
                        violation(f"{name}: {label} coordinates out of canonical bounds")
                if len(cs) and (np.any(cs.scores < 0) or np.any(cs.scores > 1)):
                    violation(f"{name}: scores outside [0,1]")

            # malformed line: precise error response, process stays alive
            try:
                resp = client._roundtrip_line("this is not json")
                if resp.get("request_id") is not None:
                    violation("malformed line: request_id should be null")
                if not resp.get("error"):
                    violation("malformed line: expected an error response")
            except BackendError as exc:
                violation(f"malformed line: {exc}")

            cp = Path(tmp) / "c_identity.png"
            try:
                client.match_files(qp, cp, image_side, max_keypoints)
            except BackendError as exc:
                violation(f"post-malformed request failed: {exc}")
    finally:
        client.close()
    return report
