"""Synthetic fleets of hardware-identical boards.

Every simulated device shares the same nominal CPU/GPU clocks for its model
class; the only per-device differences are the manufacturing-level PLL
deviations (in ppm), a temperature sensitivity and per-function jitter
scales.  A session reproduces the acquisition loop of the fingerprinting
method: each measurement runs ``sleep``, ``random`` and ``hash`` on the CPU
and records the GPU cycles that elapsed while the function ran.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Sequence

import numpy as np

PRNG_NAME = "numpy.random.PCG64"

# model class -> (cpu_hz, gpu_hz); A ~ RPi4 at fixed turbo clocks, B ~ RPi3
NOMINAL_FREQUENCIES = {
    "A": (1.5e9, 500e6),
    "B": (1.4e9, 400e6),
}
# first three MAC octets per model class (Raspberry Pi OUIs)
MAC_PREFIX = {"A": "dc:a6:32", "B": "b8:27:eb"}

DEFAULT_FUNCTIONS = ("sleep", "random", "hash")
# nominal CPU-side duration in seconds; sleep follows SessionConfig.sleep_seconds
FUNCTION_SECONDS = {"random": 5e-3, "hash": 1e-3}

DEFAULT_TOLERANCE_PPM = 30.0
DEFAULT_TEMP_COEFF = 0.05
# per-device relative duration scale, uniform (lo, hi) per function
DEFAULT_JITTER = {
    "sleep": (0.0, 0.0),
    "random": (-1e-3, 1e-3),
    "hash": (-1e-3, 1e-3),
}
# per-measurement relative jitter sigma (run-to-run variation)
DEFAULT_JITTER_SIGMA = {"sleep": 0.0, "random": 5e-4, "hash": 5e-4}


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceProfile:
    """Hidden ground-truth skew parameters of one simulated board."""

    device_id: str
    model_class: str
    cpu_ppm: float
    gpu_ppm: float
    temp_coeff_ppm_per_c: float = DEFAULT_TEMP_COEFF
    func_jitter: dict[str, float] = field(default_factory=dict)

    @property
    def delta_ppm(self) -> float:
        return self.gpu_ppm - self.cpu_ppm

    @property
    def cpu_hz(self) -> float:
        return NOMINAL_FREQUENCIES[self.model_class][0]

    @property
    def gpu_hz(self) -> float:
        return NOMINAL_FREQUENCIES[self.model_class][1]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DeviceProfile":
        return cls(
            device_id=str(data["device_id"]),
            model_class=str(data["model_class"]),
            cpu_ppm=float(data["cpu_ppm"]),
            gpu_ppm=float(data["gpu_ppm"]),
            temp_coeff_ppm_per_c=float(data.get("temp_coeff_ppm_per_c", DEFAULT_TEMP_COEFF)),
            func_jitter={k: float(v) for k, v in data.get("func_jitter", {}).items()},
        )


@dataclass(frozen=True)
class SessionConfig:
    """Parameters of one fingerprint-generation run.

    ``temp_profile`` is a list of ``(measurement_index, celsius)`` breakpoints
    interpolated linearly; ``None`` means a 40 -> 65 degC ramp over the run.
    """

    n_measurements: int = 400
    sleep_seconds: float = 120.0
    functions: tuple[str, ...] = DEFAULT_FUNCTIONS
    noise_sigma_cycles: float = 2e4
    temp_profile: tuple[tuple[float, float], ...] | None = None
    temp_ref_c: float = 25.0
    jitter_sigma: dict[str, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_measurements < 1:
            raise SimulationError("n_measurements must be >= 1")
        if self.sleep_seconds <= 0:
            raise SimulationError("sleep_seconds must be positive")
        if not self.functions:
            raise SimulationError("functions must be nonempty")
        if self.noise_sigma_cycles < 0:
            raise SimulationError("noise_sigma_cycles must be >= 0")
        unknown = [f for f in self.functions if f != "sleep" and f not in FUNCTION_SECONDS]
        if unknown:
            raise SimulationError(f"unknown functions: {unknown}")
        object.__setattr__(self, "functions", tuple(self.functions))
        if self.temp_profile is not None:
            object.__setattr__(
                self, "temp_profile",
                tuple((float(i), float(t)) for i, t in self.temp_profile),
            )

    def jitter_sigma_for(self, name: str) -> float:
        table = DEFAULT_JITTER_SIGMA if self.jitter_sigma is None else self.jitter_sigma
        return float(table.get(name, 0.0))

    def function_seconds(self, name: str) -> float:
        return self.sleep_seconds if name == "sleep" else FUNCTION_SECONDS[name]

    def temperatures(self) -> np.ndarray:
        """Ambient temperature (degC) at every measurement index."""
        idx = np.arange(self.n_measurements, dtype=float)
        profile = self.temp_profile
        if profile is None:
            profile = ((0.0, 40.0), (max(self.n_measurements - 1, 1), 65.0))
        xs, ys = zip(*sorted(profile))
        return np.interp(idx, xs, ys)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_measurements": self.n_measurements,
            "sleep_seconds": self.sleep_seconds,
            "functions": list(self.functions),
            "noise_sigma_cycles": self.noise_sigma_cycles,
            "temp_profile": None if self.temp_profile is None else [list(p) for p in self.temp_profile],
            "temp_ref_c": self.temp_ref_c,
            "jitter_sigma": None if self.jitter_sigma is None else dict(self.jitter_sigma),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SessionConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        if known.get("functions") is not None:
            known["functions"] = tuple(known["functions"])
        if known.get("temp_profile") is not None:
            known["temp_profile"] = tuple(tuple(p) for p in known["temp_profile"])
        return cls(**known)


@dataclass
class MeasurementSession:
    """Raw output of one acquisition run.

    ``measurements`` holds one dict per loop iteration:
    ``{"index": i, "<function>": gpu_cycles, ..., "temp_milli_c": t}``.
    ``extra`` keeps unknown header fields seen while decoding.
    """

    device_id: str
    claimed_model_class: str
    session_id: str
    config_echo: SessionConfig
    measurements: list[dict[str, int]]
    collector_kind: str = "simulated"
    prng: str | None = PRNG_NAME
    extra: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.measurements)

    @property
    def functions(self) -> tuple[str, ...]:
        return self.config_echo.functions

    def channel(self, name: str) -> np.ndarray:
        return np.array([m[name] for m in self.measurements], dtype=float)

    def validate(self) -> None:
        n = self.config_echo.n_measurements
        if len(self.measurements) != n:
            raise SimulationError(f"expected {n} measurements, got {len(self.measurements)}")
        for i, rec in enumerate(self.measurements):
            if rec.get("index") != i:
                raise SimulationError(f"measurement {i} has index {rec.get('index')}")
            for f in self.functions:
                if not isinstance(rec.get(f), int) or rec[f] <= 0:
                    raise SimulationError(f"measurement {i}: bad cycle count for {f!r}")


def _uniq_seed(*parts: Any) -> list[int]:
    """Stable 32-bit words for SeedSequence from arbitrary parts."""
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return [int.from_bytes(digest[i:i + 4], "big") for i in range(0, 16, 4)]


def make_device_fleet(fleet_spec: dict[str, Any]) -> list[DeviceProfile]:
    """Draw a fleet of device profiles.

    ``fleet_spec`` keys: ``count_per_model_class`` (e.g. ``{"A": 15, "B": 10}``),
    ``tolerance_ppm``, ``seed`` and optionally ``jitter_cfg`` (function ->
    ``(lo, hi)`` uniform range of relative jitter), ``temp_coeff_ppm_per_c``
    and ``temp_coeff_spread`` (half-width of a uniform per-device draw).
    """
    counts = dict(fleet_spec.get("count_per_model_class", {}))
    tol = float(fleet_spec.get("tolerance_ppm", DEFAULT_TOLERANCE_PPM))
    seed = int(fleet_spec.get("seed", 0))
    jitter_cfg = {k: tuple(v) for k, v in fleet_spec.get("jitter_cfg", DEFAULT_JITTER).items()}
    temp_coeff = float(fleet_spec.get("temp_coeff_ppm_per_c", DEFAULT_TEMP_COEFF))
    temp_spread = float(fleet_spec.get("temp_coeff_spread", 0.0))

    if tol <= 0:
        raise SimulationError("tolerance_ppm must be positive")
    for cls, c in counts.items():
        if cls not in NOMINAL_FREQUENCIES:
            raise SimulationError(f"unknown model class {cls!r}")
        if c < 0:
            raise SimulationError("counts must be >= 0")
    if sum(counts.values()) == 0:
        raise SimulationError("empty fleet")

    rng = np.random.default_rng(seed)
    fleet: list[DeviceProfile] = []
    seen: set[str] = set()
    for cls in sorted(counts):
        for _ in range(counts[cls]):
            while True:
                tail = rng.integers(0, 256, size=3)
                dev_id = MAC_PREFIX[cls] + "".join(f":{b:02x}" for b in tail)
                if dev_id not in seen:
                    seen.add(dev_id)
                    break
            fleet.append(_draw_profile(rng, dev_id, cls, tol, jitter_cfg, temp_coeff, temp_spread))
    return fleet


def _draw_profile(rng, device_id, model_class, tol, jitter_cfg, temp_coeff, temp_spread):
    cpu_ppm, gpu_ppm = rng.uniform(-tol, tol, size=2)
    coeff = temp_coeff + (rng.uniform(-temp_spread, temp_spread) if temp_spread > 0 else 0.0)
    jitter = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in sorted(jitter_cfg.items())}
    return DeviceProfile(
        device_id=device_id,
        model_class=model_class,
        cpu_ppm=float(cpu_ppm),
        gpu_ppm=float(gpu_ppm),
        temp_coeff_ppm_per_c=float(coeff),
        func_jitter=jitter,
    )


def spoof_profile(
    victim: DeviceProfile,
    seed: int,
    tolerance_ppm: float = DEFAULT_TOLERANCE_PPM,
    jitter_cfg: dict[str, tuple[float, float]] | None = None,
    temp_coeff_spread: float = 0.0,
) -> DeviceProfile:
    """An impostor board: same identifiers, fresh manufacturing draws."""
    rng = np.random.default_rng(np.random.SeedSequence(_uniq_seed("spoof", victim.device_id, seed)))
    jitter_cfg = {k: tuple(v) for k, v in (jitter_cfg or DEFAULT_JITTER).items()}
    base_coeff = victim.temp_coeff_ppm_per_c if temp_coeff_spread == 0 else DEFAULT_TEMP_COEFF
    return _draw_profile(
        rng, victim.device_id, victim.model_class, tolerance_ppm,
        jitter_cfg, base_coeff, temp_coeff_spread,
    )


def session_id_for(device_id: str, seed: int, collector_kind: str = "simulated") -> str:
    return hashlib.sha256(f"{collector_kind}|{device_id}|{seed}".encode()).hexdigest()[:16]


def expected_counts(profile: DeviceProfile, cfg: SessionConfig, name: str) -> np.ndarray:
    """Noise-free, jitter-free GPU cycle count per measurement index."""
    temps = cfg.temperatures()
    skew = (
        profile.delta_ppm * 1e-6
        + profile.temp_coeff_ppm_per_c * (temps - cfg.temp_ref_c) * 1e-6
    )
    duration = cfg.function_seconds(name) * (1.0 + profile.func_jitter.get(name, 0.0))
    return duration * profile.gpu_hz * (1.0 + skew)


def simulate_session(profile: DeviceProfile, cfg: SessionConfig) -> MeasurementSession:
    """Emit one measurement session for ``profile``.

    Observed cycles for function f at index i are
    ``round(T_f * F_gpu * (1 + skew_i) * (1 + jitter_i)) + N(0, sigma_f)``
    with ``T_f`` the nominal duration scaled by ``1 + func_jitter[f]``,
    ``skew_i`` the CPU/GPU deviation plus temperature drift,
    ``jitter_i ~ N(0, cfg.jitter_sigma[f])`` and ``sigma_f`` the noise
    scaled by ``T_f / T_sleep``.
    """
    if profile.model_class not in NOMINAL_FREQUENCIES:
        raise SimulationError(f"unknown model class {profile.model_class!r}")
    rng = np.random.default_rng(np.random.SeedSequence(_uniq_seed(profile.device_id, cfg.seed)))
    n = cfg.n_measurements
    temps = cfg.temperatures()

    channels: dict[str, np.ndarray] = {}
    for name in cfg.functions:
        base = expected_counts(profile, cfg, name)
        jitter_scale = cfg.jitter_sigma_for(name)
        jitter = rng.normal(0.0, jitter_scale, size=n) if jitter_scale > 0 else np.zeros(n)
        sigma = cfg.noise_sigma_cycles * cfg.function_seconds(name) / cfg.sleep_seconds
        noise = rng.normal(0.0, sigma, size=n) if sigma > 0 else np.zeros(n)
        counts = np.rint(np.rint(base * (1.0 + jitter)) + noise)
        channels[name] = np.maximum(counts, 1).astype(np.int64)

    temp_milli = np.rint(temps * 1000.0).astype(np.int64)
    records = []
    for i in range(n):
        rec = {"index": i}
        for name in cfg.functions:
            rec[name] = int(channels[name][i])
        rec["temp_milli_c"] = int(temp_milli[i])
        records.append(rec)

    return MeasurementSession(
        device_id=profile.device_id,
        claimed_model_class=profile.model_class,
        session_id=session_id_for(profile.device_id, cfg.seed),
        config_echo=cfg,
        measurements=records,
        collector_kind="simulated",
        prng=PRNG_NAME,
    )


def session_configs(
    n_sessions: int,
    base: SessionConfig | None = None,
    seed: int = 0,
    ramp_starts: Sequence[float] | None = None,
    ramp_span: float = 25.0,
) -> list[SessionConfig]:
    """Per-session configs for repeated fingerprinting of one device.

    Each session gets its own seed; ``ramp_starts`` (one per session) shifts
    the ambient temperature ramp to mimic collecting under varying conditions.
    """
    base = base or SessionConfig()
    out = []
    for s in range(n_sessions):
        cfg = replace(base, seed=seed * 1000 + s)
        if ramp_starts is not None:
            start = float(ramp_starts[s])
            last = max(base.n_measurements - 1, 1)
            cfg = replace(cfg, temp_profile=((0.0, start), (float(last), start + ramp_span)))
        out.append(cfg)
    return out
