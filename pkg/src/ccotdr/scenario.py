"""Scenario files: YAML, nested sections or flat dotted keys.

A scenario bundles every configuration the simulator and the analysis chain
need. Keys follow the dotted names ``probe.symbol_rate_baud``,
``fiber.length_m`` and so on; nested mappings and dotted top-level keys may
be mixed. Validation errors name the offending key.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .channel import C, AcousticStimulus, ChannelError, FiberConfig, LaserModel, Reflector, tap_spacing
from .probe import ProbeConfig, ProbeError, sample_count

SCHEMA: dict[str, set[str]] = {
    "probe": {"symbol_rate_baud", "samples_per_symbol", "prbs_order", "prbs_seed", "prbs_taps",
              "frame_duration_s", "n_frames"},
    "fiber": {"length_m", "attenuation_db_per_km", "group_index", "rayleigh_coeff_db_per_m", "reflectors"},
    "stimulus": {"span_m", "frequency_hz", "amplitude_rad", "phase_offset_rad"},
    "laser": {"linewidth_hz", "enabled"},
    "receiver": {"noise_sigma", "target_floor_db", "pol_leak"},
    "analysis": {"section_m", "n_peaks", "min_separation_m", "floor_margin_db", "peak_a", "peak_b",
                 "gauge_windows_m", "gauge_kind", "fit_range_m", "window", "exclude_below_hz",
                 "reference_m", "reference_db", "min_snr_db"},
}
TOP_LEVEL = set(SCHEMA) | {"name", "seed", "stimuli", "description"}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ReceiverSettings:
    noise_sigma: float | None = 0.0
    target_floor_db: float | None = None
    pol_leak: float = 0.0


@dataclass(frozen=True)
class AnalysisConfig:
    section_m: tuple[float, float] | None = None
    n_peaks: int = 8
    min_separation_m: float = 0.5
    floor_margin_db: float = 3.0
    peak_a: int | None = None  # 1-based rank in the peak set
    peak_b: int | None = None
    gauge_windows_m: tuple[tuple[float, float], tuple[float, float]] | None = None
    gauge_kind: str | None = None
    fit_range_m: tuple[float, float] | None = None
    window: str = "hann"
    exclude_below_hz: float | None = None
    reference_m: float | None = None
    reference_db: float | None = None
    min_snr_db: float = 15.0


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    seed: int
    probe: ProbeConfig
    fiber: FiberConfig
    stimuli: tuple[AcousticStimulus, ...]
    laser: LaserModel
    receiver: ReceiverSettings
    analysis: AnalysisConfig
    raw: dict

    @property
    def reference(self) -> tuple[float, float] | None:
        """(position_m, level_db) of the dB reference, or None if uncalibrated."""
        a = self.analysis
        if a.reference_m is not None:
            level = a.reference_db
            if level is None:
                level = next((r.reflectance_db for r in self.fiber.reflectors
                              if abs(r.position - a.reference_m) <= self.bin_m), -55.0)
            return a.reference_m, level
        if not self.fiber.reflectors:
            return None
        # the reflection that reads highest in the trace, i.e. after round-trip loss
        best = max(self.fiber.reflectors,
                   key=lambda r: r.reflectance_db - 2e-3 * self.fiber.attenuation * r.position)
        return best.position, best.reflectance_db if a.reference_db is None else a.reference_db

    @property
    def reference_is_physical(self) -> bool:
        ref = self.reference
        return ref is not None and any(abs(r.position - ref[0]) <= self.bin_m for r in self.fiber.reflectors)

    @property
    def n_taps(self) -> int:
        return int(round(self.fiber.length / self.bin_m)) + 1

    @property
    def bin_m(self) -> float:
        return tap_spacing(self.probe.sample_rate, self.fiber.group_index)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        for key, value in overrides.items():
            _set_dotted(raw, key, value)
        return from_dict(raw)


def _set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
        if not isinstance(d, dict):
            raise ConfigError(key, "cannot set a sub-key of a scalar")
    d[parts[-1]] = value


def _nest(data: Mapping) -> dict:
    out: dict = {}
    for key, value in data.items():
        if isinstance(value, Mapping) and "." not in key and key in SCHEMA:
            for k2, v2 in _nest(value).items():
                _set_dotted(out, f"{key}.{k2}", v2)
        else:
            _set_dotted(out, key, copy.deepcopy(value))
    return out


def _pair(key: str, v) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a [low, high] pair, got {v!r}") from None
    if not a < b:
        raise ConfigError(key, f"expected low < high, got {v!r}")
    return a, b


def _num(section: Mapping, prefix: str, key: str, default=None, cast=float, required=False):
    if key not in section or section[key] is None:
        if required:
            raise ConfigError(f"{prefix}.{key}", "is required")
        return default
    try:
        value = cast(section[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{prefix}.{key}", f"invalid value {section[key]!r}") from None
    if cast is int and float(section[key]) != value:
        raise ConfigError(f"{prefix}.{key}", f"expected an integer, got {section[key]!r}")
    return value


def _stimulus(d: Mapping, key: str) -> AcousticStimulus:
    unknown = set(d) - SCHEMA["stimulus"]
    if unknown:
        raise ConfigError(f"{key}.{sorted(unknown)[0]}", "unknown key")
    try:
        return AcousticStimulus(
            span=_pair(f"{key}.span_m", d.get("span_m")),
            frequency=_num(d, key, "frequency_hz", required=True),
            amplitude=_num(d, key, "amplitude_rad", required=True),
            phase_offset=_num(d, key, "phase_offset_rad", 0.0),
        )
    except ChannelError as e:
        raise ConfigError(key, str(e)) from None


def from_dict(data: Mapping) -> Scenario:
    raw = _nest(data)
    for key in raw:
        if key not in TOP_LEVEL:
            raise ConfigError(key, "unknown key")
    for section, allowed in SCHEMA.items():
        if raw.get(section) is None:  # absent, or cleared by an override
            raw[section] = {}
        value = raw[section]
        if not isinstance(value, Mapping):
            raise ConfigError(section, "expected a mapping")
        for key in value:
            if key not in allowed:
                raise ConfigError(f"{section}.{key}", "unknown key")

    p = raw.get("probe", {})
    try:
        taps = p.get("prbs_taps")
        probe = ProbeConfig(
            symbol_rate=_num(p, "probe", "symbol_rate_baud", required=True),
            frame_duration=_num(p, "probe", "frame_duration_s", required=True),
            samples_per_symbol=_num(p, "probe", "samples_per_symbol", 1, int),
            prbs_order=_num(p, "probe", "prbs_order", 13, int),
            prbs_seed=_num(p, "probe", "prbs_seed", None, int),
            n_frames=_num(p, "probe", "n_frames", 1, int),
            taps=tuple(int(t) for t in taps) if taps else None,
        )
        probe.frame_samples
    except ProbeError as e:
        key = "probe.frame_duration_s" if "frame" in str(e) else "probe"
        raise ConfigError(key, str(e)) from None

    f = raw.get("fiber", {})
    reflectors = []
    for i, r in enumerate(f.get("reflectors") or []):
        k = f"fiber.reflectors[{i}]"
        reflectors.append(Reflector(_num(r, k, "position_m", required=True), _num(r, k, "reflectance_db", required=True)))
    rayleigh = f.get("rayleigh_coeff_db_per_m", -82.0)
    fiber = FiberConfig(
        length=_num(f, "fiber", "length_m", required=True),
        attenuation=_num(f, "fiber", "attenuation_db_per_km", 0.19),
        group_index=_num(f, "fiber", "group_index", 1.468),
        rayleigh_coeff=None if rayleigh is None else _num(f, "fiber", "rayleigh_coeff_db_per_m"),
        reflectors=tuple(reflectors),
    )
    if fiber.length < 0:
        raise ConfigError("fiber.length_m", "must be >= 0")
    for i, r in enumerate(reflectors):
        if not 0 <= r.position <= fiber.length:
            raise ConfigError(f"fiber.reflectors[{i}].position_m", f"{r.position} m lies beyond the fibre end")
        if r.reflectance_db > 0:
            raise ConfigError(f"fiber.reflectors[{i}].reflectance_db", "must be <= 0 dB")
    # every echo of the full code must land inside its own frame
    needed = probe.code_duration + 2.0 * fiber.group_index * fiber.length / C
    if probe.frame_duration < needed:
        raise ConfigError(
            "probe.frame_duration_s",
            f"{probe.frame_duration:g} s is shorter than code duration plus fibre round trip ({needed:g} s)",
        )

    stimuli = []
    if raw.get("stimulus"):
        stimuli.append(_stimulus(raw["stimulus"], "stimulus"))
    for i, s in enumerate(raw.get("stimuli") or []):
        stimuli.append(_stimulus(s, f"stimuli[{i}]"))

    las = raw.get("laser", {})
    try:
        laser = LaserModel(_num(las, "laser", "linewidth_hz", 100.0), bool(las.get("enabled", True)))
    except ChannelError as e:
        raise ConfigError("laser.linewidth_hz", str(e)) from None

    rc = raw.get("receiver", {})
    if rc.get("noise_sigma") is not None and rc.get("target_floor_db") is not None:
        raise ConfigError("receiver.noise_sigma", "mutually exclusive with receiver.target_floor_db")
    receiver = ReceiverSettings(
        noise_sigma=_num(rc, "receiver", "noise_sigma", None if rc.get("target_floor_db") is not None else 0.0),
        target_floor_db=_num(rc, "receiver", "target_floor_db"),
        pol_leak=_num(rc, "receiver", "pol_leak", 0.0),
    )
    if receiver.noise_sigma is not None and receiver.noise_sigma < 0:
        raise ConfigError("receiver.noise_sigma", "must be >= 0")
    if not 0 <= receiver.pol_leak <= 1:
        raise ConfigError("receiver.pol_leak", "must lie in [0, 1]")

    a = raw.get("analysis", {})
    windows = a.get("gauge_windows_m")
    if windows is not None:
        if len(windows) != 2:
            raise ConfigError("analysis.gauge_windows_m", "expected two [low, high] windows")
        windows = tuple(_pair(f"analysis.gauge_windows_m[{i}]", w) for i, w in enumerate(windows))
    gauge_kind = a.get("gauge_kind")
    if gauge_kind not in (None, "rayleigh", "reflector"):
        raise ConfigError("analysis.gauge_kind", "expected 'rayleigh' or 'reflector'")
    analysis = AnalysisConfig(
        section_m=_pair("analysis.section_m", a["section_m"]) if a.get("section_m") is not None else None,
        n_peaks=_num(a, "analysis", "n_peaks", 8, int),
        min_separation_m=_num(a, "analysis", "min_separation_m", 0.5),
        floor_margin_db=_num(a, "analysis", "floor_margin_db", 3.0),
        peak_a=_num(a, "analysis", "peak_a", None, int),
        peak_b=_num(a, "analysis", "peak_b", None, int),
        gauge_windows_m=windows,
        gauge_kind=gauge_kind,
        fit_range_m=_pair("analysis.fit_range_m", a["fit_range_m"]) if a.get("fit_range_m") is not None else None,
        window=str(a.get("window", "hann")),
        exclude_below_hz=_num(a, "analysis", "exclude_below_hz"),
        reference_m=_num(a, "analysis", "reference_m"),
        reference_db=_num(a, "analysis", "reference_db"),
        min_snr_db=_num(a, "analysis", "min_snr_db", 15.0),
    )

    seed = raw.get("seed", 0)
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError("seed", f"invalid value {seed!r}") from None
    if seed < 0:
        raise ConfigError("seed", "must be >= 0")

    return Scenario(
        name=str(raw.get("name", "scenario")),
        seed=seed,
        probe=probe,
        fiber=fiber,
        stimuli=tuple(stimuli),
        laser=laser,
        receiver=receiver,
        analysis=analysis,
        raw=raw,
    )


def builtin_names() -> list[str]:
    root = resources.files("ccotdr") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(source: str | Path, overrides: Mapping[str, Any] | None = None) -> Scenario:
    """Load a scenario from a YAML path or a built-in scenario name."""
    path = Path(source)
    if path.exists():
        text = path.read_text()
    else:
        res = resources.files("ccotdr") / "scenarios" / f"{source}.yaml"
        if not res.is_file():
            raise ConfigError("config", f"no scenario file or built-in scenario named {str(source)!r}")
        text = res.read_text()
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError("config", f"YAML parse error: {e}") from None
    if not isinstance(data, Mapping):
        raise ConfigError("config", "top level must be a mapping")
    data = dict(data)
    for key, value in (overrides or {}).items():
        data[key] = value
    return from_dict(data)


def frame_samples(scenario: Scenario) -> int:
    return sample_count(scenario.probe.frame_duration, scenario.probe.sample_rate)
