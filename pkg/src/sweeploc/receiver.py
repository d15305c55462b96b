"""Receiver side: envelope detection, peak timing, 2D fixes, logging.

The receiver never sees phase. It samples an envelope-detector output,
finds which AP is transmitting from an 8-bit OOK preamble, locates the
sweep's peak sample, and maps peak time back to a bearing with the same
linear sweep map the transmitter used. Two bearings from two APs give a
2D fix through a precomputed intersection table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .scenario import ApConfig, ConfigError, DetectorConfig, Position
from .transmitter import PREAMBLE_PATTERNS

PREAMBLE_CORRELATION_THRESHOLD = 0.75


class LowConfidenceFixError(ValueError):
    """The two bearings do not intersect in a usable way."""


class StoreFullError(RuntimeError):
    """The measurement log is at capacity."""


@dataclass(frozen=True)
class EnvelopeTrace:
    """Sampled detector output: volts plus a below-floor flag per sample."""

    volts: np.ndarray
    sample_rate_hz: float
    t0_s: float
    floor_clipped: np.ndarray

    def __len__(self) -> int:
        return len(self.volts)


def envelope_detect(trace, det: DetectorConfig,
                    rng: np.random.Generator | None = None) -> EnvelopeTrace:
    """Run a field trace through the detector response and output sampler.

    Instantaneous input power |s|^2 (mW) maps through the monotone response
    to volts, clipping below the sensitivity floor. If the field is
    oversampled relative to the detector output rate the response output is
    block-averaged down; Gaussian output noise (sigma from the detector
    config) is added after decimation when an rng is given.
    """
    factor_f = trace.sample_rate_hz / det.sample_rate_hz
    factor = round(factor_f)
    if factor < 1 or abs(factor_f - factor) > 1e-9:
        raise ConfigError("field rate must be an integer multiple of detector rate")
    power_mw = np.abs(trace.samples) ** 2
    with np.errstate(divide="ignore"):
        power_dbm = 10.0 * np.log10(power_mw)
    volts = det.response_volts(power_dbm)
    clipped = power_dbm < det.sensitivity_floor_dbm
    if factor > 1:
        n = (len(volts) // factor) * factor
        volts = volts[:n].reshape(-1, factor).mean(axis=1)
        clipped = clipped[:n].reshape(-1, factor).all(axis=1)
    if rng is not None and det.noise_sigma_volts > 0:
        volts = volts + rng.normal(0.0, det.noise_sigma_volts, len(volts))
    return EnvelopeTrace(volts=volts, sample_rate_hz=det.sample_rate_hz,
                         t0_s=trace.t0_s, floor_clipped=clipped)


# --- sweep timing shared by the estimator and the fast ensemble path ------

def _ceil_tol(x: float) -> int:
    # ceil robust to float representation of exact products like 0.008*4000
    return math.ceil(x - 1e-9)


def sweep_window_samples(ap: ApConfig, sample_rate_hz: float) -> tuple[int, int]:
    """Half-open [first, stop) sample range of the sweep within one period,
    relative to the period's first sample."""
    first = _ceil_tol(ap.preamble_duration_s * sample_rate_hz)
    stop = _ceil_tol(ap.sweep_period_s * sample_rate_hz)
    return first, stop


def period_samples(ap: ApConfig, sample_rate_hz: float) -> int:
    return round(ap.sweep_period_s * sample_rate_hz)


def angle_from_sample(ap: ApConfig, mode: str, sample_index: int,
                      sample_rate_hz: float) -> float:
    """Invert sweep timing: peak sample index (within a period) to bearing.

    The sweep covers its commanded range linearly in time, so the fraction
    of the sweep elapsed at the peak gives the commanded value back. In
    "alg1" mode that value is the bearing itself; in "uniform-theta" mode
    it is the inter-antenna increment, mapped through arcsin.
    """
    t = sample_index / sample_rate_hz
    frac = (t - ap.preamble_duration_s) / (ap.sweep_period_s - ap.preamble_duration_s)
    frac = min(max(frac, 0.0), 1.0)
    if mode == "alg1":
        return frac * math.pi - math.pi / 2
    if mode == "uniform-theta":
        increment = frac * 2.0 * math.pi - math.pi
        return math.asin(min(max(increment / math.pi, -1.0), 1.0))
    raise ConfigError(f"unknown sweep mode {mode!r}")


def step_estimate_angles(ap: ApConfig, mode: str,
                         sample_rate_hz: float) -> np.ndarray:
    """Bearing the estimator reports if step m wins the peak search.

    The peak search returns the earliest sample of the winning step, so
    this is angle_from_sample at each step's first covering sample. Kept
    in one place so vectorized experiments and the sample-domain receiver
    agree exactly.
    """
    dwell = ap.sweep_dwell_s
    out = np.empty(ap.sweep_step_count)
    for m in range(ap.sweep_step_count):
        s = _ceil_tol((ap.preamble_duration_s + m * dwell) * sample_rate_hz)
        out[m] = angle_from_sample(ap, mode, s, sample_rate_hz)
    return out


@dataclass(frozen=True)
class AngleEstimate:
    """One raw bearing from one sweep, plus its smoothed value."""

    ap_index: int
    raw_rad: float
    smoothed_rad: float
    peak_sample: int
    timestamp_s: float

    @property
    def raw_deg(self) -> float:
        return math.degrees(self.raw_rad)

    @property
    def smoothed_deg(self) -> float:
        return math.degrees(self.smoothed_rad)


def estimate_angle(env: EnvelopeTrace, period_start_sample: int, ap: ApConfig,
                   mode: str, ap_index: int = 0,
                   smoothed_rad: float | None = None) -> AngleEstimate:
    """Peak-sample bearing estimate for the period starting at the given sample.

    Scans the sweep portion only (preamble excluded), takes the earliest
    maximum, and inverts the sweep's linear time map.
    """
    first, stop = sweep_window_samples(ap, env.sample_rate_hz)
    lo = period_start_sample + first
    hi = period_start_sample + stop
    if period_start_sample < 0 or hi > len(env.volts):
        raise ConfigError("sweep window extends past the captured buffer")
    rel = int(np.argmax(env.volts[lo:hi]))
    raw = angle_from_sample(ap, mode, first + rel, env.sample_rate_hz)
    return AngleEstimate(ap_index=ap_index, raw_rad=raw,
                         smoothed_rad=raw if smoothed_rad is None else smoothed_rad,
                         peak_sample=lo + rel,
                         timestamp_s=env.t0_s + (lo + rel) / env.sample_rate_hz)


def smooth_angle(previous_rad: float | None, raw_rad: float,
                 smoothing: float) -> float:
    """Exponential smoothing: weight `smoothing` on history. None seeds."""
    if not 0.0 <= smoothing < 1.0:
        raise ConfigError("smoothing must be in [0, 1)")
    if previous_rad is None:
        return raw_rad
    return smoothing * previous_rad + (1.0 - smoothing) * raw_rad


@dataclass(frozen=True)
class PreambleDetection:
    preamble_id: int
    start_sample: int
    correlation: float


def correlate_pattern(volts: np.ndarray, pattern: Iterable[int],
                      samples_per_bit: int) -> np.ndarray:
    """Normalized (Pearson) correlation of the OOK template at every offset."""
    template = np.repeat(np.asarray(list(pattern), dtype=float), samples_per_bit)
    length = len(template)
    if len(volts) < length:
        return np.empty(0)
    tc = template - template.mean()
    tnorm = math.sqrt(float(tc @ tc))
    windows = np.lib.stride_tricks.sliding_window_view(volts, length)
    wc = windows - windows.mean(axis=1, keepdims=True)
    wnorm = np.sqrt((wc * wc).sum(axis=1))
    num = wc @ tc
    den = wnorm * tnorm
    out = np.zeros(len(num))
    nonzero = den > 0
    out[nonzero] = num[nonzero] / den[nonzero]
    return out


def find_preamble(env: EnvelopeTrace, ap: ApConfig, start: int = 0,
                  stop: int | None = None,
                  threshold: float = PREAMBLE_CORRELATION_THRESHOLD
                  ) -> PreambleDetection | None:
    """Best correlation offset for this AP's preamble in [start, stop).

    stop bounds the template's *start* offset. Returns None when no offset
    reaches the threshold.
    """
    spb_f = ap.preamble_bit_duration_s * env.sample_rate_hz
    spb = round(spb_f)
    if spb < 1 or abs(spb_f - spb) > 1e-6:
        raise ConfigError("preamble bit must span an integer number of samples")
    pattern = PREAMBLE_PATTERNS[ap.preamble_id]
    corr = correlate_pattern(env.volts, pattern, spb)
    if len(corr) == 0:
        return None
    stop = len(corr) if stop is None else min(stop, len(corr))
    if start >= stop:
        return None
    segment = corr[start:stop]
    best = int(np.argmax(segment))
    if segment[best] < threshold:
        return None
    return PreambleDetection(preamble_id=ap.preamble_id,
                             start_sample=start + best,
                             correlation=float(segment[best]))


# --- two-AP fix -----------------------------------------------------------

MIN_CROSSING_SINE = 0.05  # reject fixes where the rays are nearly parallel


def intersect_bearings(ap1: ApConfig, bearing1_rad: float, ap2: ApConfig,
                       bearing2_rad: float) -> Position | None:
    """Exact intersection of the two bearing rays, or None if degenerate.

    Degenerate means nearly parallel rays (|sin of crossing angle| below
    MIN_CROSSING_SINE) or an intersection behind either AP.
    """
    a1 = ap1.boresight_rad + bearing1_rad
    a2 = ap2.boresight_rad + bearing2_rad
    u1 = (math.cos(a1), math.sin(a1))
    u2 = (math.cos(a2), math.sin(a2))
    den = u1[0] * u2[1] - u1[1] * u2[0]
    if abs(den) < MIN_CROSSING_SINE:
        return None
    dx = ap2.position.x - ap1.position.x
    dy = ap2.position.y - ap1.position.y
    t1 = (dx * u2[1] - dy * u2[0]) / den
    t2 = (dx * u1[1] - dy * u1[0]) / den
    if t1 <= 0 or t2 <= 0:
        return None
    return Position(ap1.position.x + t1 * u1[0], ap1.position.y + t1 * u1[1])


@dataclass(frozen=True)
class LocationFix:
    position: Position
    timestamp_s: float
    bearing1_rad: float
    bearing2_rad: float


class LookupTable:
    """Bearing-pair to position table at fixed angular resolution.

    Cell (i, j) stores the exact ray intersection for the pair of cell
    center bearings; unusable pairs hold NaN. Lookup quantizes incoming
    bearings to their cells, mirroring a table a microcontroller would
    carry instead of solving geometry online.
    """

    def __init__(self, ap1: ApConfig, ap2: ApConfig,
                 resolution_deg: float = 1.0) -> None:
        if not 0.0 < resolution_deg <= 30.0:
            raise ConfigError("resolution_deg must be in (0, 30]")
        self.ap1 = ap1
        self.ap2 = ap2
        self.resolution_deg = resolution_deg
        self.cell_count = round(180.0 / resolution_deg)
        if abs(self.cell_count * resolution_deg - 180.0) > 1e-9:
            raise ConfigError("resolution_deg must divide 180 evenly")
        centers = -90.0 + (np.arange(self.cell_count) + 0.5) * resolution_deg
        self.centers_rad = np.deg2rad(centers)
        n = self.cell_count
        self.xs = np.full((n, n), np.nan)
        self.ys = np.full((n, n), np.nan)
        for i, b1 in enumerate(self.centers_rad):
            for j, b2 in enumerate(self.centers_rad):
                pt = intersect_bearings(ap1, float(b1), ap2, float(b2))
                if pt is not None:
                    self.xs[i, j] = pt.x
                    self.ys[i, j] = pt.y

    def cell_index(self, bearing_rad: float) -> int:
        deg = math.degrees(bearing_rad)
        idx = math.floor((deg + 90.0) / self.resolution_deg)
        if idx == self.cell_count and deg <= 90.0:
            idx -= 1  # +90 degrees belongs to the top cell
        if not 0 <= idx < self.cell_count:
            raise LowConfidenceFixError(f"bearing {deg:.2f} deg outside the table")
        return idx

    def valid_fraction(self) -> float:
        return float(np.isfinite(self.xs).mean())


def fix_2d(bearing1_rad: float, bearing2_rad: float, table: LookupTable,
           timestamp_s: float = 0.0) -> LocationFix:
    """Quantize two bearings into the table and return the stored fix.

    Raises LowConfidenceFixError for out-of-range bearings or cells whose
    rays are degenerate (nearly parallel or crossing behind an AP).
    """
    i = table.cell_index(bearing1_rad)
    j = table.cell_index(bearing2_rad)
    x = table.xs[i, j]
    if not math.isfinite(x):
        raise LowConfidenceFixError("bearing pair has no usable intersection")
    return LocationFix(position=Position(float(x), float(table.ys[i, j])),
                       timestamp_s=timestamp_s,
                       bearing1_rad=bearing1_rad, bearing2_rad=bearing2_rad)


# --- measurement log --------------------------------------------------------

SENSOR_KINDS: dict[str, tuple[int, int]] = {
    # kind -> (tag, value bits); every record is one tagged measurement
    "humidity": (0, 11),
    "temperature": (1, 11),
    "light": (2, 12),
}

_TAG_TO_KIND = {tag: kind for kind, (tag, _) in SENSOR_KINDS.items()}

RECORD_SIZE_BYTES = 4


def angle_code(bearing_rad: float) -> int:
    """Quantize a bearing in [-90, 90] degrees to an 8-bit code."""
    deg = min(max(math.degrees(bearing_rad), -90.0), 90.0)
    return round((deg + 90.0) / 180.0 * 255.0)


def angle_from_code(code: int) -> float:
    if not 0 <= code <= 255:
        raise ConfigError("angle code must fit 8 bits")
    return math.radians(code / 255.0 * 180.0 - 90.0)


@dataclass(frozen=True)
class SensorRecord:
    """One logged measurement with the bearings current at log time.

    Packs to exactly 4 bytes: 2-bit kind tag, 12-bit value (11-bit kinds
    zero-extended), two 8-bit angle codes, 2 reserved zero bits.
    """

    kind: str
    value: int
    angle1_code: int
    angle2_code: int

    def __post_init__(self) -> None:
        if self.kind not in SENSOR_KINDS:
            raise ConfigError(f"unknown sensor kind {self.kind!r}")
        bits = SENSOR_KINDS[self.kind][1]
        if not 0 <= self.value < (1 << bits):
            raise ConfigError(f"{self.kind} value must fit {bits} bits")
        for code in (self.angle1_code, self.angle2_code):
            if not 0 <= code <= 255:
                raise ConfigError("angle codes must fit 8 bits")

    def pack(self) -> bytes:
        tag = SENSOR_KINDS[self.kind][0]
        word = (tag << 30) | (self.value << 18) | (self.angle1_code << 10) \
            | (self.angle2_code << 2)
        return word.to_bytes(RECORD_SIZE_BYTES, "big")

    @classmethod
    def unpack(cls, data: bytes) -> "SensorRecord":
        if len(data) != RECORD_SIZE_BYTES:
            raise ConfigError("a packed record is exactly 4 bytes")
        word = int.from_bytes(data, "big")
        tag = word >> 30
        if tag not in _TAG_TO_KIND:
            raise ConfigError(f"unknown kind tag {tag}")
        if word & 0x3:
            raise ConfigError("reserved bits must be zero")
        return cls(kind=_TAG_TO_KIND[tag], value=(word >> 18) & 0xFFF,
                   angle1_code=(word >> 10) & 0xFF,
                   angle2_code=(word >> 2) & 0xFF)


@dataclass
class LogStore:
    """Fixed-capacity measurement log, sized in bytes like the real flash."""

    capacity_bytes: int = 32768
    records: list[SensorRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.capacity_bytes < RECORD_SIZE_BYTES:
            raise ConfigError("capacity must hold at least one record")

    @property
    def max_records(self) -> int:
        return self.capacity_bytes // RECORD_SIZE_BYTES

    @property
    def used_bytes(self) -> int:
        return len(self.records) * RECORD_SIZE_BYTES

    def append(self, record: SensorRecord) -> None:
        if len(self.records) >= self.max_records:
            raise StoreFullError(f"log full at {self.max_records} records")
        self.records.append(record)

    def clear(self) -> None:
        self.records.clear()

    def dump(self) -> bytes:
        return b"".join(r.pack() for r in self.records)

    @classmethod
    def restore(cls, data: bytes, capacity_bytes: int = 32768) -> "LogStore":
        if len(data) % RECORD_SIZE_BYTES:
            raise ConfigError("dump length must be a multiple of 4 bytes")
        store = cls(capacity_bytes=capacity_bytes)
        for k in range(0, len(data), RECORD_SIZE_BYTES):
            store.append(SensorRecord.unpack(data[k:k + RECORD_SIZE_BYTES]))
        return store


# --- stateful driver --------------------------------------------------------

@dataclass(frozen=True)
class LocalizationResult:
    """Outcome of one buffer scan: detections, angles, and the fix if any."""

    detections: tuple[PreambleDetection | None, PreambleDetection | None]
    angles: tuple[AngleEstimate | None, AngleEstimate | None]
    fix: LocationFix | None
    low_confidence: bool = False

    @property
    def ok(self) -> bool:
        return self.fix is not None


class Receiver:
    """Runs the capture-scan-estimate-smooth-fix loop over sample buffers.

    Keeps one smoothed bearing per AP across calls and an optional
    measurement log. Buffers must contain at least two full sweep periods
    after the first AP's preamble for a fix to come out.
    """

    def __init__(self, aps: tuple[ApConfig, ApConfig], sweep_mode: str,
                 smoothing: float, table: LookupTable | None = None,
                 store: LogStore | None = None) -> None:
        if len(aps) < 2:
            raise ConfigError("a 2D receiver needs two APs")
        self.aps = aps
        self.sweep_mode = sweep_mode
        self.smoothing = smoothing
        self.table = table if table is not None else LookupTable(aps[0], aps[1])
        self.store = store if store is not None else LogStore()
        self.smoothed: list[float | None] = [None, None]
        self.fixes: list[LocationFix] = []

    def process_buffer(self, env: EnvelopeTrace) -> LocalizationResult:
        ap1, ap2 = self.aps[0], self.aps[1]
        n_period = period_samples(ap1, env.sample_rate_hz)
        # det1 needs two full slots after it; det2 needs one.
        search_stop = len(env.volts) - 2 * n_period + 1
        det1 = find_preamble(env, ap1, 0, max(search_stop, 0))
        if det1 is None:
            return LocalizationResult((None, None), (None, None), None)
        est1 = self._track(env, det1.start_sample, 0)
        det2_stop = min(det1.start_sample + 2 * n_period - 1,
                        len(env.volts) - n_period + 1)
        det2 = find_preamble(env, ap2, det1.start_sample + n_period, det2_stop)
        if det2 is None:
            return LocalizationResult((det1, None), (est1, None), None)
        est2 = self._track(env, det2.start_sample, 1)
        try:
            fix = fix_2d(est1.smoothed_rad, est2.smoothed_rad, self.table,
                         timestamp_s=est2.timestamp_s)
        except LowConfidenceFixError:
            return LocalizationResult((det1, det2), (est1, est2), None,
                                      low_confidence=True)
        self.fixes.append(fix)
        return LocalizationResult((det1, det2), (est1, est2), fix)

    def _track(self, env: EnvelopeTrace, start_sample: int,
               which: int) -> AngleEstimate:
        raw = estimate_angle(env, start_sample, self.aps[which],
                             self.sweep_mode, ap_index=which)
        smoothed = smooth_angle(self.smoothed[which], raw.raw_rad, self.smoothing)
        self.smoothed[which] = smoothed
        return AngleEstimate(ap_index=which, raw_rad=raw.raw_rad,
                             smoothed_rad=smoothed, peak_sample=raw.peak_sample,
                             timestamp_s=raw.timestamp_s)

    def log_measurement(self, kind: str, value: int) -> SensorRecord:
        """Append one measurement stamped with the current smoothed bearings."""
        b1 = self.smoothed[0] if self.smoothed[0] is not None else 0.0
        b2 = self.smoothed[1] if self.smoothed[1] is not None else 0.0
        record = SensorRecord(kind=kind, value=value,
                              angle1_code=angle_code(b1), angle2_code=angle_code(b2))
        self.store.append(record)
        return record
