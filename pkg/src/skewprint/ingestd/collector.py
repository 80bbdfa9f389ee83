"""Best-effort acquisition loop on the local host.

Commodity machines expose no GPU cycle counter, so two other time sources
stand in for the CPU/GPU pair: the monotonic high-resolution wall clock is
the counter whose delta is recorded for each function run, and the calling
thread's CPU-time clock is the secondary source (its delta is kept alongside
under ``<function>_cpu_ns``).  Sessions collected here carry
``collector_kind = "host"`` and no accuracy claim is attached to them.
"""
from __future__ import annotations

import hashlib
import os
import socket
import time
import uuid
from pathlib import Path
from typing import Any, Callable, Mapping

from ..simulator import DEFAULT_FUNCTIONS, MeasurementSession, SessionConfig

THERMAL_ZONE = Path("/sys/class/thermal/thermal_zone0/temp")
# work sizes chosen to take a few milliseconds on a typical laptop core
RANDOM_BYTES = 1 << 20
HASH_BYTES = 1 << 21
_HASH_BUFFER = bytes(HASH_BYTES)


class CollectorError(RuntimeError):
    pass


def _secondary_clock() -> Callable[[], int]:
    try:
        time.get_clock_info("thread_time")
        time.thread_time_ns()
    except (AttributeError, OSError, ValueError):
        raise CollectorError("no secondary clock") from None
    return time.thread_time_ns


def _run_random() -> None:
    os.urandom(RANDOM_BYTES)


def _run_hash() -> None:
    hashlib.sha256(_HASH_BUFFER).digest()


def host_device_id() -> str:
    node = uuid.getnode()
    return ":".join(f"{(node >> s) & 0xFF:02x}" for s in range(40, -8, -8))


def read_temperature_milli_c() -> int | None:
    try:
        return int(THERMAL_ZONE.read_text().strip())
    except (OSError, ValueError):
        return None


def collect_session(
    host_cfg: Mapping[str, Any] | None = None,
    device_id: str | None = None,
    counter: Callable[[], int] = time.perf_counter_ns,
    secondary: Callable[[], int] | None = None,
) -> MeasurementSession:
    """Run the measurement loop ``n_measurements`` times on this host.

    ``host_cfg`` takes ``n_measurements``, ``sleep_seconds`` and
    ``functions``.  Raises :class:`CollectorError` ("no secondary clock")
    when the CPU-time clock is unavailable.
    """
    cfg_in = dict(host_cfg or {})
    cfg = SessionConfig(
        n_measurements=int(cfg_in.get("n_measurements", 400)),
        sleep_seconds=float(cfg_in.get("sleep_seconds", 120.0)),
        functions=tuple(cfg_in.get("functions", DEFAULT_FUNCTIONS)),
        noise_sigma_cycles=0.0,
        seed=0,
    )
    if secondary is None:
        secondary = _secondary_clock()
    runners = {
        "sleep": lambda: time.sleep(cfg.sleep_seconds),
        "random": _run_random,
        "hash": _run_hash,
    }
    with_temp = read_temperature_milli_c() is not None
    started = time.time_ns()

    records = []
    for i in range(cfg.n_measurements):
        rec: dict[str, int] = {"index": i}
        for name in cfg.functions:
            c0, s0 = counter(), secondary()
            runners[name]()
            s1, c1 = secondary(), counter()
            rec[name] = max(int(c1 - c0), 1)
            rec[f"{name}_cpu_ns"] = int(s1 - s0)
        if with_temp:
            t = read_temperature_milli_c()
            if t is not None:
                rec["temp_milli_c"] = t
        records.append(rec)

    device_id = device_id or host_device_id()
    stamp = f"{socket.gethostname()}|{device_id}|{started}|host"
    return MeasurementSession(
        device_id=device_id,
        claimed_model_class="host",
        session_id=hashlib.sha256(stamp.encode()).hexdigest()[:16],
        config_echo=cfg,
        measurements=records,
        collector_kind="host",
        prng=None,
        extra={"collected_at_ns": started},
    )
