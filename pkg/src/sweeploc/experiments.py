"""Named experiments producing deterministic CSV result tables.

Every experiment derives all randomness from (scenario seed, experiment
name, cell/trial indices), so reruns and any worker count produce
byte-identical output. Trials are grouped into fixed-size chunks that are
the unit of parallel dispatch; chunk boundaries never depend on the worker
count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .backscatter import (InsectNode, SensorRecord, ber_point,
                          frame_from_records, hive_mac_session,
                          payload_duration_s)
from .channel import add_noise, concat_traces, draw_multipath, propagate, \
    silence_trace
from .pipeline import (draw_pathsets, fast_estimate_bearings, localize_once,
                       synthesize_rounds)
from .power import (BatteryConfig, PowerProfile, RfHarvest, SolarHarvest,
                    average_current_ma, average_power_uw, battery_life_h,
                    logging_endurance_h, rf_charge_time_h)
from .receiver import (LookupTable, Receiver, envelope_detect, estimate_angle,
                       find_preamble, period_samples)
from .scenario import (ConfigError, Position, Scenario, Trajectory,
                       scenario_digest, trial_rng, true_bearing)
from .transmitter import build_sweep_schedule

GRID_CHUNK = 1024
BER_CHUNK = 25000


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment invocation: what to run, on what, how hard."""

    experiment: str
    scenario: Scenario
    trials: int | None = None
    out_path: str | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.trials is not None and self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class ResultTable:
    """Columns, rows, and '#'-prefixed metadata for one experiment run."""

    columns: tuple[str, ...]
    rows: list[tuple]
    meta: dict[str, object] = field(default_factory=dict)

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [row[k] for row in self.rows]


def _format_cell(value) -> str:
    if isinstance(value, (np.floating,)):
        value = float(value)
    if isinstance(value, (np.integer,)):
        value = int(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(table: ResultTable) -> str:
    lines = [f"# {key}={_format_cell(val)}" for key, val in table.meta.items()]
    lines.append(",".join(table.columns))
    for row in table.rows:
        lines.append(",".join(_format_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def emit_csv(table: ResultTable, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_csv(table))


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def read_csv(path: str) -> ResultTable:
    meta: dict[str, object] = {}
    columns: tuple[str, ...] | None = None
    rows: list[tuple] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# "):
                key, _, val = line[2:].partition("=")
                meta[key] = _parse_scalar(val)
            elif columns is None:
                columns = tuple(line.split(","))
            else:
                rows.append(tuple(_parse_scalar(v) for v in line.split(",")))
    if columns is None:
        raise ConfigError(f"no header found in {path}")
    return ResultTable(columns=columns, rows=rows, meta=meta)


def _base_meta(spec: ExperimentSpec, trials) -> dict[str, object]:
    return {
        "experiment": spec.experiment,
        "scenario_sha256": scenario_digest(spec.scenario),
        "seed": spec.scenario.seed,
        "sweep_mode": spec.scenario.sweep_mode,
        "trials": trials,
        "tool_version": __version__,
    }


def _map_ordered(fn: Callable, tasks: Sequence, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _chunks(total: int, size: int) -> list[tuple[int, int, int]]:
    return [(idx, lo, min(lo + size, total))
            for idx, lo in enumerate(range(0, total, size))]


# --- multipath grid ---------------------------------------------------------

GRID_ANTENNA_COUNTS = (2, 3, 4, 5)
GRID_RATIOS = tuple(round(0.1 * k, 1) for k in range(11))
GRID_BEARING_LIMIT_DEG = 60.0


def grid_cell_errors(scn: Scenario, n_ant: int, ratio: float, r_key,
                     chunk_idx: int, n: int,
                     bearing_limit_deg: float = GRID_BEARING_LIMIT_DEG
                     ) -> np.ndarray:
    """Signed bearing errors (degrees) for one grid cell chunk.

    The rng stream is keyed by the ratio and chunk only, never the antenna
    count, so different antenna counts face identical channel draws
    (common random numbers) and the trend across N is not washed out by
    draw noise.
    """
    ap = replace(scn.aps[0], antenna_count=n_ant)
    channel = replace(scn.channel, multipath_ratio=ratio)
    rng = trial_rng(scn.seed, "multipath_grid", r_key, chunk_idx)
    limit = math.radians(bearing_limit_deg)
    los = rng.uniform(-limit, limit, n)
    pathsets = [draw_multipath(channel, rng, float(b)) for b in los]
    est = fast_estimate_bearings(ap, scn.sweep_mode,
                                 scn.detector.sample_rate_hz, pathsets, los)
    return np.degrees(est - los)


def _grid_ratio_chunk(task) -> list[tuple[int, int, float, float, int]]:
    scn, r_idx, chunk_idx, lo, hi = task
    out = []
    for n_ant in GRID_ANTENNA_COUNTS:
        err_deg = grid_cell_errors(scn, n_ant, GRID_RATIOS[r_idx], r_idx,
                                   chunk_idx, hi - lo)
        out.append((n_ant, r_idx, float(np.abs(err_deg).sum()),
                    float(err_deg.sum()), hi - lo))
    return out


def multipath_grid(spec: ExperimentSpec) -> ResultTable:
    """Mean bearing error over an (antenna count x multipath ratio) grid.

    LOS bearings are drawn uniformly inside GRID_BEARING_LIMIT_DEG so the
    sweep's usable sector, not its endfire compression, is what the grid
    measures. All antenna counts see the same channel draws per trial.
    """
    scn = spec.scenario
    trials = spec.trials or 10000
    tasks = [(scn, r_idx, chunk_idx, lo, hi)
             for r_idx in range(len(GRID_RATIOS))
             for chunk_idx, lo, hi in _chunks(trials, GRID_CHUNK)]
    results = _map_ordered(_grid_ratio_chunk, tasks, spec.workers)
    sums: dict[tuple[int, int], list[float]] = {}
    for chunk_out in results:
        for n_ant, r_idx, abs_sum, signed_sum, count in chunk_out:
            acc = sums.setdefault((n_ant, r_idx), [0.0, 0.0, 0])
            acc[0] += abs_sum
            acc[1] += signed_sum
            acc[2] += count
    rows = []
    for n_ant in GRID_ANTENNA_COUNTS:
        for r_idx, ratio in enumerate(GRID_RATIOS):
            abs_sum, signed_sum, count = sums[(n_ant, r_idx)]
            rows.append((n_ant, ratio, count, abs_sum / count, signed_sum / count))
    meta = _base_meta(spec, trials)
    meta["bearing_limit_deg"] = GRID_BEARING_LIMIT_DEG
    meta["nlos_path_count"] = scn.channel.nlos_path_count
    return ResultTable(
        columns=("antenna_count", "multipath_ratio", "trials",
                 "mean_abs_error_deg", "mean_signed_error_deg"),
        rows=rows, meta=meta)


# --- range sweep -------------------------------------------------------------

RANGE_DISTANCES_M = tuple(float(d) for d in range(10, 121, 10))
RANGE_BEARING_LIMIT_DEG = 30.0


def _range_chunk(task) -> tuple[int, int, int, float]:
    scn, d_idx, lo, hi = task
    ap = scn.aps[0]
    schedule = build_sweep_schedule(ap, scn.sweep_mode)
    fs = scn.detector.sample_rate_hz
    period = ap.sweep_period_s
    distance = RANGE_DISTANCES_M[d_idx]
    limit = math.radians(RANGE_BEARING_LIMIT_DEG)
    detected = 0
    abs_err_sum = 0.0
    for t in range(lo, hi):
        rng = trial_rng(scn.seed, "range_sweep", d_idx, t)
        bearing = rng.uniform(-limit, limit)
        heading = ap.boresight_rad + bearing
        pos = Position(ap.position.x + distance * math.cos(heading),
                       ap.position.y + distance * math.sin(heading))
        paths = draw_multipath(scn.channel, rng, bearing)
        slot = propagate(schedule, paths, pos, fs, t0_s=period / 2.0)
        buffer = concat_traces([silence_trace(period / 2.0, fs),
                                slot,
                                silence_trace(period, fs)])
        buffer = add_noise(buffer, scn.channel.noise_power_dbm, rng)
        env = envelope_detect(buffer, scn.detector, rng)
        stop = len(env.volts) - 2 * period_samples(ap, fs) + 1
        det = find_preamble(env, ap, 0, stop)
        if det is None:
            continue
        detected += 1
        est = estimate_angle(env, det.start_sample, ap, scn.sweep_mode)
        abs_err_sum += abs(math.degrees(est.raw_rad - bearing))
    return (d_idx, hi - lo, detected, abs_err_sum)


def range_sweep(spec: ExperimentSpec) -> ResultTable:
    """Detection rate and bearing error as the receiver walks away from
    one AP, until the preamble drops below the detector floor."""
    scn = spec.scenario
    trials = spec.trials or 200
    tasks = [(scn, d_idx, lo, hi)
             for d_idx in range(len(RANGE_DISTANCES_M))
             for _, lo, hi in _chunks(trials, GRID_CHUNK)]
    results = _map_ordered(_range_chunk, tasks, spec.workers)
    acc: dict[int, list[float]] = {}
    for d_idx, count, detected, abs_err in results:
        entry = acc.setdefault(d_idx, [0, 0, 0.0])
        entry[0] += count
        entry[1] += detected
        entry[2] += abs_err
    rows = []
    for d_idx, distance in enumerate(RANGE_DISTANCES_M):
        count, detected, abs_err = acc[d_idx]
        mean_err = abs_err / detected if detected else float("nan")
        rows.append((distance, count, detected, detected / count, mean_err))
    meta = _base_meta(spec, trials)
    meta["bearing_limit_deg"] = RANGE_BEARING_LIMIT_DEG
    return ResultTable(
        columns=("distance_m", "trials", "detected", "detect_rate",
                 "mean_abs_error_deg"),
        rows=rows, meta=meta)


# --- farm fix CDF ------------------------------------------------------------

FARM_MARGIN_M = 5.0
FARM_RATIO_MAX = 0.6

_TABLE_CACHE: dict[str, LookupTable] = {}


def _cached_table(scn: Scenario) -> LookupTable:
    key = scenario_digest(scn)
    if key not in _TABLE_CACHE:
        _TABLE_CACHE[key] = LookupTable(scn.aps[0], scn.aps[1])
    return _TABLE_CACHE[key]


def _farm_chunk(task) -> tuple[list[tuple], int]:
    scn, lo, hi = task
    if scn.field_extent_m is None:
        raise ConfigError("farm experiment needs a field extent")
    width, height = scn.field_extent_m
    table = _cached_table(scn)
    rows: list[tuple] = []
    skipped = 0
    for t in range(lo, hi):
        rng = trial_rng(scn.seed, "farm_cdf", t)
        pos = Position(rng.uniform(FARM_MARGIN_M, width - FARM_MARGIN_M),
                       rng.uniform(FARM_MARGIN_M, height - FARM_MARGIN_M))
        ratio = rng.uniform(0.0, FARM_RATIO_MAX)
        scn_t = replace(scn, channel=replace(scn.channel, multipath_ratio=ratio))
        result = localize_once(scn_t, pos, rng, table)
        if not result.ok:
            skipped += 1
            continue
        err = result.fix.position.distance_to(pos)
        rows.append((pos.x, pos.y, ratio, err))
    return rows, skipped


def farm_cdf(spec: ExperimentSpec) -> ResultTable:
    """Full-pipeline 2D fix error over random field positions; rows come
    out sorted by error with an empirical CDF column."""
    scn = spec.scenario
    trials = spec.trials or 1000
    tasks = [(scn, lo, hi) for _, lo, hi in _chunks(trials, GRID_CHUNK)]
    results = _map_ordered(_farm_chunk, tasks, spec.workers)
    rows: list[tuple] = []
    skipped = 0
    for chunk_rows, chunk_skipped in results:
        rows.extend(chunk_rows)
        skipped += chunk_skipped
    rows.sort(key=lambda r: (r[3], r[0], r[1]))
    n = len(rows)
    rows = [row + ((k + 1) / n,) for k, row in enumerate(rows)]
    errors = [row[3] for row in rows]
    meta = _base_meta(spec, trials)
    meta["skipped"] = skipped
    meta["median_error_m"] = float(np.median(errors)) if errors else float("nan")
    meta["ratio_max"] = FARM_RATIO_MAX
    meta["margin_m"] = FARM_MARGIN_M
    return ResultTable(
        columns=("x_m", "y_m", "multipath_ratio", "error_m", "cdf"),
        rows=rows, meta=meta)


# --- speed sweep -------------------------------------------------------------

SPEED_POINTS_MPS = (0.0, 1.0, 3.0, 5.0, 7.0, 9.1)
SPEED_ROUNDS = 40
SPEED_MARGIN_M = 30.0
SPEED_RATIO = 0.4


def _speed_chunk(task) -> tuple[int, int, int, float, float]:
    scn, s_idx, lo, hi = task
    if scn.field_extent_m is None:
        raise ConfigError("speed experiment needs a field extent")
    width, height = scn.field_extent_m
    speed = SPEED_POINTS_MPS[s_idx]
    scn_t = replace(scn, channel=replace(scn.channel, doppler_enabled=True,
                                         multipath_ratio=SPEED_RATIO))
    table = _cached_table(scn)
    round_s = len(scn.aps) * scn.aps[0].sweep_period_s
    redraw_m = scn.channel.nlos_redraw_distance_m
    tracked = 0
    raw_sum = 0.0
    smooth_sum = 0.0
    for t in range(lo, hi):
        rng = trial_rng(scn.seed, "speed_sweep", s_idx, t)
        start = Position(rng.uniform(SPEED_MARGIN_M, width - SPEED_MARGIN_M),
                         rng.uniform(SPEED_MARGIN_M, height - SPEED_MARGIN_M))
        center_dir = math.atan2(height / 2.0 - start.y, width / 2.0 - start.x)
        heading = center_dir + rng.uniform(-math.pi / 6, math.pi / 6)
        duration = SPEED_ROUNDS * round_s
        if speed > 0:
            traj = Trajectory.line(start, heading, speed, duration)
        else:
            traj = Trajectory.stationary(start)
        receiver = Receiver(scn_t.aps[:2], scn_t.sweep_mode, scn_t.smoothing,
                            table=table)
        pathsets = None
        last_draw: Position | None = None
        for r in range(SPEED_ROUNDS):
            t0 = r * round_s
            pos = traj.position_at(t0)
            if last_draw is None or pos.distance_to(last_draw) >= redraw_m:
                pathsets = draw_pathsets(scn_t, traj, rng, t0_s=t0)
                last_draw = pos
            fieldtrace = synthesize_rounds(scn_t, pathsets, traj, rounds=1,
                                           t0_s=t0, noise_rng=rng)
            env = envelope_detect(fieldtrace, scn_t.detector, rng)
            result = receiver.process_buffer(env)
            for which, est in enumerate(result.angles):
                if est is None:
                    continue
                truth = true_bearing(scn_t.aps[which],
                                     traj.position_at(est.timestamp_s))
                raw_sum += abs(math.degrees(est.raw_rad - truth))
                smooth_sum += abs(math.degrees(est.smoothed_rad - truth))
                tracked += 1
    return (s_idx, hi - lo, tracked, raw_sum, smooth_sum)


def speed_sweep(spec: ExperimentSpec) -> ResultTable:
    """Tracking error while the receiver moves, with Doppler and periodic
    path redraws, across platform speeds."""
    scn = spec.scenario
    trials = spec.trials or 30
    tasks = [(scn, s_idx, lo, hi)
             for s_idx in range(len(SPEED_POINTS_MPS))
             for _, lo, hi in _chunks(trials, GRID_CHUNK)]
    results = _map_ordered(_speed_chunk, tasks, spec.workers)
    acc: dict[int, list[float]] = {}
    for s_idx, count, tracked, raw_sum, smooth_sum in results:
        entry = acc.setdefault(s_idx, [0, 0, 0.0, 0.0])
        entry[0] += count
        entry[1] += tracked
        entry[2] += raw_sum
        entry[3] += smooth_sum
    rows = []
    for s_idx, speed in enumerate(SPEED_POINTS_MPS):
        count, tracked, raw_sum, smooth_sum = acc[s_idx]
        if tracked:
            rows.append((speed, count, tracked, raw_sum / tracked,
                         smooth_sum / tracked))
        else:
            rows.append((speed, count, 0, float("nan"), float("nan")))
    meta = _base_meta(spec, trials)
    meta["rounds_per_trial"] = SPEED_ROUNDS
    meta["multipath_ratio"] = SPEED_RATIO
    return ResultTable(
        columns=("speed_mps", "trials", "angles_tracked",
                 "mean_raw_error_deg", "mean_smoothed_error_deg"),
        rows=rows, meta=meta)


# --- backscatter BER ---------------------------------------------------------

BER_SNR_POINTS_DB = tuple(float(s) for s in range(-12, 7, 2))


def _ber_chunk(task) -> tuple[int, int, int]:
    scn, p_idx, chunk_idx, n_bits = task
    rng = trial_rng(scn.seed, "ber_vs_snr", p_idx, chunk_idx)
    _, errors = ber_point(BER_SNR_POINTS_DB[p_idx], n_bits, rng)
    return (p_idx, n_bits, errors)


def ber_vs_snr(spec: ExperimentSpec) -> ResultTable:
    """Uplink bit error rate against per-sample SNR at the capture."""
    scn = spec.scenario
    bits = spec.trials or 100000
    tasks = [(scn, p_idx, chunk_idx, hi - lo)
             for p_idx in range(len(BER_SNR_POINTS_DB))
             for chunk_idx, lo, hi in _chunks(bits, BER_CHUNK)]
    results = _map_ordered(_ber_chunk, tasks, spec.workers)
    acc: dict[int, list[int]] = {}
    for p_idx, count, errors in results:
        entry = acc.setdefault(p_idx, [0, 0])
        entry[0] += count
        entry[1] += errors
    rows = []
    for p_idx, snr in enumerate(BER_SNR_POINTS_DB):
        count, errors = acc[p_idx]
        ber = errors / count
        half_ci = 1.96 * math.sqrt(max(ber * (1.0 - ber), 1e-12) / count)
        rows.append((snr, count, errors, ber, half_ci))
    meta = _base_meta(spec, bits)
    meta["samples_per_bit"] = 16
    return ResultTable(
        columns=("snr_db", "bits", "errors", "ber", "ci95_half_width"),
        rows=rows, meta=meta)


# --- hive MAC session --------------------------------------------------------

MAC_DISTANCES_M = (2.0, 3.5, 5.0, 30.0)
MAC_RECORDS_PER_INSECT = 50


def _demo_records(address: int) -> list[SensorRecord]:
    kinds = ("humidity", "temperature", "light")
    records = []
    for k in range(MAC_RECORDS_PER_INSECT):
        kind = kinds[k % 3]
        width = {"humidity": 11, "temperature": 11, "light": 12}[kind]
        value = (address * 37 + k * 101) % (1 << width)
        records.append(SensorRecord(kind=kind, value=value,
                                    angle1_code=(address + k) % 256,
                                    angle2_code=(address * 3 + k) % 256))
    return records


def mac_session(spec: ExperimentSpec) -> ResultTable:
    """One reader polling round over a small hive, including one insect
    parked beyond the downlink decode range."""
    scn = spec.scenario
    rng = trial_rng(scn.seed, "mac_session")
    insects = []
    for k, dist in enumerate(MAC_DISTANCES_M):
        node = InsectNode(address=0x10 + k, distance_m=dist)
        for record in _demo_records(node.address):
            node.store.append(record)
        insects.append(node)
    transcript = hive_mac_session(insects, rng)
    one = payload_duration_s(frame_from_records(_demo_records(0x10)[:1]))
    ten = payload_duration_s(frame_from_records(_demo_records(0x10)[:10]))
    meta = _base_meta(spec, len(insects))
    meta["fairness_index"] = transcript.fairness_index()
    meta["total_elapsed_s"] = transcript.total_elapsed_s
    meta["payload_s_one_record"] = one
    meta["payload_s_ten_records"] = ten
    meta["payload_note"] = ("a 32 ms uplink at 1 kbps carries one 4-byte "
                            "record; ten records need 320 ms")
    return ResultTable(
        columns=("address", "attempt", "address_decoded", "replied",
                 "bits_sent", "bit_errors", "start_s", "end_s", "skipped"),
        rows=transcript.to_rows(), meta=meta)


# --- power report ------------------------------------------------------------

POWER_PERIODS_S = (1.0, 2.0, 4.0, 5.0, 8.0, 10.0)


def power_report(spec: ExperimentSpec) -> ResultTable:
    """Duty-cycle current/power/lifetime table plus harvest anchors."""
    profile = PowerProfile()
    battery = BatteryConfig()
    rows = []
    for period in POWER_PERIODS_S:
        avg_ma = average_current_ma(profile, awake_s=0.1, period_s=period)
        rows.append((period,
                     avg_ma * 1000.0,
                     average_power_uw(profile, awake_s=0.1, period_s=period),
                     battery_life_h(profile, battery, awake_s=0.1,
                                    period_s=period),
                     logging_endurance_h(interval_s=period)))
    rf = RfHarvest()
    solar = SolarHarvest()
    meta = _base_meta(spec, len(rows))
    meta["rf_charge_time_h"] = rf_charge_time_h(rf, battery)
    meta["solar_1klux_uw"] = solar.power_uw(1000.0)
    meta["solar_20klux_uw"] = solar.power_uw(20000.0)
    return ResultTable(
        columns=("period_s", "average_current_ua", "average_power_uw",
                 "battery_life_h", "log_endurance_h"),
        rows=rows, meta=meta)


EXPERIMENTS: dict[str, Callable[[ExperimentSpec], ResultTable]] = {
    "multipath_grid": multipath_grid,
    "range_sweep": range_sweep,
    "farm_cdf": farm_cdf,
    "speed_sweep": speed_sweep,
    "ber_vs_snr": ber_vs_snr,
    "mac_session": mac_session,
    "power_report": power_report,
}


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    if spec.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {spec.experiment!r}; "
                          f"choose from {sorted(EXPERIMENTS)}")
    table = EXPERIMENTS[spec.experiment](spec)
    if spec.out_path:
        emit_csv(table, spec.out_path)
    return table
