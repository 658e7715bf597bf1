"""Canonical JSON: sorted keys, floats at 12 significant digits, numpy types unwrapped."""

from __future__ import annotations

import json
import math
from typing import Any, Dict, Mapping, Optional

import numpy as np

from metashap.attribution import AttributionResult, InteractionMatrix
from metashap.space import HyperparameterSpace, decode

SIGNIFICANT_DIGITS = 12
ATTRIBUTION_SCHEMA_VERSION = "attribution/v1"


def canonical(obj: Any) -> Any:
    """Recursively convert to JSON-native types with fixed-precision floats."""
    if isinstance(obj, Mapping):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(f"{x:.{SIGNIFICANT_DIGITS}g}")
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(canonical(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj: Any) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(obj))


def attribution_to_dict(
    attr: AttributionResult,
    inter: InteractionMatrix,
    space: Optional[HyperparameterSpace] = None,
) -> Dict[str, Any]:
    """Per-sample and aggregated attributions; ``config_values`` are decoded when ``space`` is given."""
    per_sample = []
    for x, phi in zip(attr.samples, attr.per_sample_phi):
        cfg = decode(x, space) if space is not None else x.tolist()
        per_sample.append({"config_values": cfg, "phi": phi.tolist()})
    d = {
        "schema_version": ATTRIBUTION_SCHEMA_VERSION,
        "method": attr.method,
        "base_value": attr.base_value,
        "players": list(attr.players),
        "global_importance": attr.global_importance.tolist(),
        "per_sample": per_sample,
        "interactions": inter.matrix.tolist(),
        "interaction_sample": decode(inter.sample, space) if space is not None else inter.sample.tolist(),
    }
    if attr.standard_errors is not None:
        d["standard_errors"] = attr.standard_errors.tolist()
        d["n_permutations"] = attr.n_permutations
    return d
