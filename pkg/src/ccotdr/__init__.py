"""Simulation and processing chain for coherent-correlation OTDR fibre sensing."""

from .analysis import detect_tone, diff_phase, extract_phase, find_peaks, fit_attenuation, spectrum
from .channel import AcousticStimulus, FiberConfig, LaserModel, Reflector, build_fiber, channel_response, propagate
from .correlator import ReferencePeak, correlate_frame, fingerprint, power_trace, sidelobe_metric
from .pipeline import Simulation, calibrate_noise_floor, process, report
from .probe import ProbeConfig, build_frame, generate_code, timing
from .receiver import CaptureFile, FrameCapture, ReceiverConfig, detect, write_capture
from .scenario import ConfigError, Scenario, load_scenario

__version__ = "0.1.0"
