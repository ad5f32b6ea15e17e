"""Session configuration loading (JSON file + environment overrides).

Schema (all keys optional, defaults embedded):

    {
      "tick_rate_hz": 1000,
      "audio":  {"p_max": 2.0, "F_max": 6.0},
      "haptic": {"A_drill": 0.25, "f": 500.0, "k_c": 20.0},
      "burrs":  [{"radius_mm": 1.0, "tip": "cutting", "brr": 2.0}, ...],
      "sensitive_labels": [2, 3],
      "hardness": {"1": 1.0},
      "batch_size": 10000,
      "force_sample_hz": 100.0
    }

Environment variables prefixed DRILLVOX_ override scalar fields, e.g.
DRILLVOX_TICK_RATE_HZ=500.
"""

from __future__ import annotations

import json
import os

from .drill import AudioConfig, Burr, HapticConfig, default_burr_catalog
from .errors import ValidationError
from .session import SessionConfig

__all__ = ["load_config"]

_ENV_SCALARS = {
    "DRILLVOX_TICK_RATE_HZ": ("tick_rate_hz", float),
    "DRILLVOX_BATCH_SIZE": ("batch_size", int),
    "DRILLVOX_FORCE_SAMPLE_HZ": ("force_sample_hz", float),
}


def load_config(path: str | None = None, env: dict | None = None) -> SessionConfig:
    doc: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot load config {path}: {exc}") from exc
    env = os.environ if env is None else env
    for var, (key, conv) in _ENV_SCALARS.items():
        if var in env:
            try:
                doc[key] = conv(env[var])
            except ValueError as exc:
                raise ValidationError(f"bad value for {var}: {env[var]!r}") from exc

    try:
        burrs = default_burr_catalog()
        if "burrs" in doc:
            burrs = [Burr(float(b["radius_mm"]), b["tip"], float(b["brr"]))
                     for b in doc["burrs"]]
        audio = AudioConfig(**doc.get("audio", {}))
        haptic = HapticConfig(**doc.get("haptic", {}))
        sensitive = (set(int(x) for x in doc["sensitive_labels"])
                     if "sensitive_labels" in doc else None)
        hardness = {int(k): float(v) for k, v in doc.get("hardness", {}).items()}
        return SessionConfig(
            tick_rate_hz=float(doc.get("tick_rate_hz", 1000.0)),
            burrs=burrs,
            audio=audio,
            haptic=haptic,
            sensitive_labels=sensitive,
            hardness=hardness,
            batch_size=int(doc.get("batch_size", 10_000)),
            force_sample_hz=float(doc.get("force_sample_hz", 100.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed config: {exc}") from exc
