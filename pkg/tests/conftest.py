"""Shared fixtures: a tiny scenario that runs end to end in well under a second."""

from __future__ import annotations

import copy

import pytest

from ccotdr.scenario import from_dict

# 50 MBaud at 2 samples/symbol: 100 MS/s, about 1.02 m per lag; 200 m fibre.
# delta_f = 1/(64 * 48 us) = 325.52 Hz, so 1953.125 Hz sits on bin 6. The stimulus
# ends before the 170 m reflector tap, which therefore sees the full phase swing.
TINY = {
    "name": "tiny",
    "seed": 7,
    "probe": {
        "symbol_rate_baud": 50e6,
        "samples_per_symbol": 2,
        "prbs_order": 10,
        "frame_duration_s": 48e-6,
        "n_frames": 64,
    },
    "fiber": {
        "length_m": 200.0,
        "attenuation_db_per_km": 0.19,
        "rayleigh_coeff_db_per_m": -82.0,
        "reflectors": [
            {"position_m": 0.0, "reflectance_db": -55.0},
            {"position_m": 150.0, "reflectance_db": -50.0},
            {"position_m": 170.0, "reflectance_db": -50.0},
        ],
    },
    "stimulus": {"span_m": [155.0, 165.0], "frequency_hz": 1953.125, "amplitude_rad": 0.5},
    "laser": {"linewidth_hz": 100.0, "enabled": True},
    "receiver": {"noise_sigma": 0.0},
    "analysis": {
        "section_m": [140.0, 180.0],
        "gauge_windows_m": [[148.0, 152.0], [168.0, 172.0]],
        "gauge_kind": "reflector",
    },
}


def tiny_dict(**overrides) -> dict:
    """Deep copy of the tiny scenario with dotted-key overrides applied."""
    d = copy.deepcopy(TINY)
    for key, value in overrides.items():
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        if value is None:
            node.pop(parts[-1], None)
        else:
            node[parts[-1]] = value
    return d


@pytest.fixture
def tiny():
    return from_dict(tiny_dict())


@pytest.fixture
def tiny_yaml(tmp_path):
    import yaml

    def write(**overrides):
        path = tmp_path / "tiny.yaml"
        path.write_text(yaml.safe_dump(tiny_dict(**overrides)))
        return path

    return write


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
