from .chain import (NoiseBudget, ScaleFactor, accel_per_detuning, estimate_acceleration,
                    frequency_vs_acceleration, noise_budget, optical_shift_readout,
                    scale_factor, transduce_acceleration)
from .servo import (ClosedLoopResult, RangeController, RetuneEvent, SaturationError,
                    extend_dynamic_range, frequency_map, ledger_to_json, run_closed_loop,
                    synthesize_oscillator)
from .tracking import FrequencyTrack, TrackerConfig, track_frequency, window_estimate
