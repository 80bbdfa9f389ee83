"""Fleet-level glue: simulate repeated sessions per device and build datasets."""
from __future__ import annotations

from dataclasses import replace
from typing import Any, Mapping, Sequence

import numpy as np

from .featurizer import Dataset, WindowConfig, split_sessions
from .simulator import (
    DeviceProfile,
    MeasurementSession,
    SessionConfig,
    make_device_fleet,
    session_configs,
    simulate_session,
)

DEFAULT_FLEET = {"count_per_model_class": {"A": 15, "B": 10}, "tolerance_ppm": 30.0, "seed": 7}
# ambient ramps start anywhere in this range (degC), one draw per session
DEFAULT_RAMP_START = (30.0, 50.0)


def simulate_fleet_sessions(
    fleet: Sequence[DeviceProfile],
    n_sessions: int = 10,
    base: SessionConfig | None = None,
    seed: int = 0,
    ramp_start_range: tuple[float, float] | None = DEFAULT_RAMP_START,
) -> dict[str, list[MeasurementSession]]:
    """``n_sessions`` sessions per device, each with its own seed and ramp."""
    base = base or SessionConfig()
    rng = np.random.default_rng(seed)
    out = {}
    for i, profile in enumerate(fleet):
        starts = None
        if ramp_start_range is not None:
            starts = rng.uniform(*ramp_start_range, size=n_sessions)
        cfgs = session_configs(n_sessions, base, seed=seed * 10_000 + i + 1, ramp_starts=starts)
        out[profile.device_id] = [simulate_session(profile, c) for c in cfgs]
    return out


def build_dataset(
    fleet_spec: Mapping[str, Any] | None = None,
    n_sessions: int = 10,
    train_count: int = 6,
    base: SessionConfig | None = None,
    window_cfg: WindowConfig | None = None,
    seed: int = 0,
    scaler_kind: str = "minmax",
    ramp_start_range: tuple[float, float] | None = DEFAULT_RAMP_START,
) -> tuple[list[DeviceProfile], dict[str, list[MeasurementSession]], Dataset]:
    fleet = make_device_fleet(dict(fleet_spec or DEFAULT_FLEET))
    sessions = simulate_fleet_sessions(fleet, n_sessions, base, seed, ramp_start_range)
    ds = split_sessions(sessions, train_count, window_cfg, scaler_kind)
    return fleet, sessions, ds


def attack_session(
    victim: DeviceProfile,
    attack_seed: int,
    base: SessionConfig | None = None,
    fleet_spec: Mapping[str, Any] | None = None,
) -> MeasurementSession:
    """One session from a fresh impostor board cloned onto ``victim``'s identity."""
    from .simulator import DEFAULT_JITTER, DEFAULT_TOLERANCE_PPM, spoof_profile

    spec = dict(fleet_spec or {})
    impostor = spoof_profile(
        victim,
        attack_seed,
        tolerance_ppm=float(spec.get("tolerance_ppm", DEFAULT_TOLERANCE_PPM)),
        jitter_cfg=spec.get("jitter_cfg", DEFAULT_JITTER),
        temp_coeff_spread=float(spec.get("temp_coeff_spread", 0.0)),
    )
    cfg = replace(base or SessionConfig(), seed=1_000_000 + attack_seed)
    return simulate_session(impostor, cfg)
