"""Importance-weighted posterior estimation on partitioned data.

Thin wrapper over the C++ core: scenario configs go in as dicts (or JSON
strings), results come back as dicts mirroring the on-disk results.csv and
manifest.json.
"""

import json as _json

from ._lemie import (
    _run_scenario_json,
    _run_sweep_json,
    _write_truth_json,
    error_2norm,
    ess_from_log_weights,
    khat,
)

__all__ = [
    "error_2norm",
    "ess_from_log_weights",
    "khat",
    "run_scenario",
    "run_sweep",
    "write_truth",
]


def _as_json(config):
    return config if isinstance(config, str) else _json.dumps(config)


def run_scenario(config, out_dir):
    """Run one scenario end to end, writing artifacts under out_dir.

    Returns {"any_failed": bool, "rows": [...], "manifest": {...}} where each
    row has scenario/method/m/metric/value/se/note keys.  Non-finite metric
    values arrive as None.
    """
    return _json.loads(_run_scenario_json(_as_json(config), str(out_dir)))


def run_sweep(config, field, values, out_dir):
    """Run the scenario once per grid value of `field` ("m" or
    "n_per_worker"), sharing the truth posterior where it is invariant."""
    return _json.loads(
        _run_sweep_json(_as_json(config), field, [int(v) for v in values], str(out_dir))
    )


def write_truth(config, out_dir):
    """Export truth posterior draws plus a summary JSON for a config."""
    _write_truth_json(_as_json(config), str(out_dir))
