"""Amplitude-only sweep localization simulator.

Phased-array access points sweep a beam over the field while tiny
envelope-detector receivers recover their own bearing from the time at
which the sweep's peak passes over them. Two access points in TDMA give a
2D fix through a precomputed intersection table; a backscatter subcarrier
uplink carries logged measurements back out; power and memory models size
the platform's budgets.
"""

__version__ = "0.1.0"

from .scenario import (ApConfig, ChannelConfig, ConfigError, DetectorConfig,
                       GeometryError, Position, Scenario, Trajectory,
                       free_space_loss_db, load_scenario, load_scenario_file,
                       scenario_digest, scenario_to_yaml, trial_rng,
                       true_bearing, wrap_angle)
from .transmitter import (PREAMBLE_PATTERNS, SweepSchedule, TdmaPlan,
                          build_sweep_schedule, tdma_plan)
from .channel import (FieldTrace, Path, PathSet, add_noise, apply_doppler,
                      array_factor_mag, draw_multipath, phased_sum, propagate)
from .receiver import (AngleEstimate, EnvelopeTrace, LocationFix, LogStore,
                       LookupTable, LowConfidenceFixError, Receiver,
                       SensorRecord, StoreFullError, envelope_detect,
                       estimate_angle, find_preamble, fix_2d,
                       intersect_bearings, smooth_angle)
from .backscatter import (DemodConfig, Frame, InsectNode, LinkBudget,
                          SwitchWaveform, ap_demodulate, ber_point,
                          frame_from_records, hive_mac_session,
                          modulate_frame, payload_duration_s,
                          transmit_backscatter)
from .power import (BatteryConfig, PowerProfile, RfHarvest, SolarHarvest,
                    average_current_ma, battery_life_h, logging_endurance_h,
                    rf_charge_time_h, solar_charge_time_h)
from .pipeline import (capture_envelope, fast_estimate_bearings,
                       localize_once, synthesize_rounds)
from .experiments import (EXPERIMENTS, ExperimentSpec, ResultTable, emit_csv,
                          read_csv, run_experiment)
