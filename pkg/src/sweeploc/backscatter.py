"""Backscatter uplink: subcarrier switch modulation, demodulation, hive MAC.

The tag never generates a carrier; it toggles its antenna load at a
subcarrier rate during one-bits, so the interrogator sees OOK sidebands
offset from its own carrier. Reception is modeled at the interrogator's
complex envelope centered on the subcarrier offset (the strong 0 Hz
carrier leakage is band-passed away), decimated to a few samples per bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .receiver import LogStore, SensorRecord
from .scenario import ConfigError, DetectorConfig, free_space_loss_db

MAX_FRAME_BITS = 8 * 32768  # a full measurement log
SUBCARRIER_GAIN_DB = 20.0 * math.log10(2.0 / math.pi)  # square-wave fundamental
SYNC_PATTERN: tuple[int, ...] = (1, 0, 1, 0, 1, 0, 1, 0)


@dataclass(frozen=True)
class Frame:
    """An uplink payload: bits at the tag's (slow) backscatter bitrate."""

    bits: tuple[int, ...]
    bitrate_hz: float = 1000.0

    def __post_init__(self) -> None:
        if not 1 <= len(self.bits) <= MAX_FRAME_BITS:
            raise ConfigError(f"frame must carry 1..{MAX_FRAME_BITS} bits")
        if any(b not in (0, 1) for b in self.bits):
            raise ConfigError("frame bits must be 0 or 1")
        if self.bitrate_hz <= 0:
            raise ConfigError("bitrate must be positive")

    @property
    def payload_duration_s(self) -> float:
        return len(self.bits) / self.bitrate_hz


def payload_duration_s(frame: Frame) -> float:
    return frame.payload_duration_s


def frame_from_records(records: Sequence[SensorRecord],
                       bitrate_hz: float = 1000.0) -> Frame:
    """Serialize packed records to an uplink frame, MSB first."""
    payload = b"".join(r.pack() for r in records)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    return Frame(bits=tuple(int(b) for b in bits), bitrate_hz=bitrate_hz)


def records_from_bits(bits: Sequence[int]) -> list[SensorRecord]:
    arr = np.asarray(bits, dtype=np.uint8)
    if len(arr) % 32:
        raise ConfigError("record payload must be a whole number of 32-bit records")
    payload = np.packbits(arr).tobytes()
    return [SensorRecord.unpack(payload[k:k + 4]) for k in range(0, len(payload), 4)]


@dataclass(frozen=True)
class SwitchWaveform:
    """The tag's antenna-switch drive: 0/1 states at the modulator rate."""

    states: np.ndarray
    sample_rate_hz: float
    subcarrier_hz: float
    bitrate_hz: float

    def rising_edges(self) -> int:
        """Count 0-to-1 switch events, including a leading rise from idle."""
        padded = np.concatenate(([0], self.states.astype(np.int8)))
        return int(np.count_nonzero(np.diff(padded) == 1))

    @property
    def duration_s(self) -> float:
        return len(self.states) / self.sample_rate_hz


def modulate_frame(frame: Frame, sample_rate_hz: float = 8e6,
                   subcarrier_hz: float = 2e6) -> SwitchWaveform:
    """Expand frame bits to the switch drive: one-bits toggle at the
    subcarrier with 50% duty, zero-bits leave the switch open."""
    spb_f = sample_rate_hz / frame.bitrate_hz
    half_f = sample_rate_hz / (2.0 * subcarrier_hz)
    spb, half = round(spb_f), round(half_f)
    if spb < 2 or abs(spb_f - spb) > 1e-6:
        raise ConfigError("sample rate must be an integer multiple of the bitrate")
    if half < 1 or abs(half_f - half) > 1e-6:
        raise ConfigError("sample rate must resolve the subcarrier half-period")
    if spb % (2 * half):
        raise ConfigError("each bit must span whole subcarrier cycles")
    one_bit = ((np.arange(spb) // half) % 2 == 0).astype(np.uint8)
    states = np.outer(np.asarray(frame.bits, dtype=np.uint8), one_bit).reshape(-1)
    return SwitchWaveform(states=states, sample_rate_hz=sample_rate_hz,
                          subcarrier_hz=subcarrier_hz, bitrate_hz=frame.bitrate_hz)


@dataclass(frozen=True)
class LinkBudget:
    """Two-way interrogator-tag-interrogator budget at one distance."""

    distance_m: float
    tx_power_dbm: float = 20.0
    carrier_hz: float = 915e6
    reflection_loss_db: float = 10.0
    noise_floor_dbm: float = -90.0

    def __post_init__(self) -> None:
        if self.distance_m <= 0:
            raise ConfigError("distance must be positive")
        if self.reflection_loss_db < 0:
            raise ConfigError("reflection loss must be >= 0")

    @property
    def path_gain_db(self) -> float:
        """Amplitude-level gain applied to the switch waveform (dB)."""
        return (self.tx_power_dbm
                - 2.0 * free_space_loss_db(self.distance_m, self.carrier_hz)
                - self.reflection_loss_db)

    @property
    def received_power_dbm(self) -> float:
        """Subcarrier fundamental power back at the interrogator."""
        return self.path_gain_db + SUBCARRIER_GAIN_DB


@dataclass(frozen=True)
class DemodConfig:
    """Interrogator-side capture and decision parameters."""

    offset_hz: float = 2e6
    sample_rate_hz: float = 16000.0
    filter_bandwidth_hz: float = 1000.0

    def __post_init__(self) -> None:
        if self.offset_hz <= 0 or self.sample_rate_hz <= 0:
            raise ConfigError("offset and sample rate must be positive")
        if self.filter_bandwidth_hz <= 0:
            raise ConfigError("filter bandwidth must be positive")

    @property
    def filter_length(self) -> int:
        return max(1, round(self.sample_rate_hz / self.filter_bandwidth_hz))


@dataclass(frozen=True)
class RxCapture:
    """Complex envelope at the subcarrier offset, a few samples per bit."""

    samples: np.ndarray
    sample_rate_hz: float
    bitrate_hz: float

    @property
    def samples_per_bit(self) -> int:
        return round(self.sample_rate_hz / self.bitrate_hz)


def transmit_backscatter(wave: SwitchWaveform, link: LinkBudget,
                         demod: DemodConfig,
                         rng: np.random.Generator | None = None) -> RxCapture:
    """Mix the reflected switch waveform down to the subcarrier offset and
    decimate to the capture rate; add receiver noise when an rng is given.

    Uses the analytic-signal convention (factor 2 on the mixer output), so
    a one-bit's fundamental lands at amplitude gain * (2/pi) in the
    infinite-rate limit.
    """
    factor_f = wave.sample_rate_hz / demod.sample_rate_hz
    factor = round(factor_f)
    if factor < 1 or abs(factor_f - factor) > 1e-6:
        raise ConfigError("modulator rate must be an integer multiple of the capture rate")
    gain = 10.0 ** (link.path_gain_db / 20.0)
    n = (len(wave.states) // factor) * factor
    # Mix and decimate in factor-aligned slices; the full modulator-rate
    # complex waveform would not fit memory for long frames.
    chunk = max(factor, (4_000_000 // factor) * factor)
    parts = []
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        t = np.arange(lo, hi) / wave.sample_rate_hz
        mixed = 2.0 * gain * wave.states[lo:hi] \
            * np.exp(-2j * math.pi * demod.offset_hz * t)
        parts.append(mixed.reshape(-1, factor).mean(axis=1))
    env = np.concatenate(parts)
    if rng is not None:
        sigma = math.sqrt(10.0 ** (link.noise_floor_dbm / 10.0) / 2.0)
        env = env + rng.normal(0.0, sigma, len(env)) \
            + 1j * rng.normal(0.0, sigma, len(env))
    return RxCapture(samples=env, sample_rate_hz=demod.sample_rate_hz,
                     bitrate_hz=wave.bitrate_hz)


def demod_fundamental_gain(wave_rate_hz: float = 8e6,
                           subcarrier_hz: float = 2e6) -> complex:
    """Complex per-bit gain the discrete mix+decimate applies to a one-bit
    of unit path gain. Its magnitude approaches 2/pi as the modulator rate
    grows."""
    half = round(wave_rate_hz / (2.0 * subcarrier_hz))
    cycle = 2 * half
    k = np.arange(cycle)
    states = ((k // half) % 2 == 0).astype(float)
    return complex(2.0 * np.mean(states * np.exp(-2j * math.pi * k / cycle)))


def bit_magnitudes(rx: RxCapture, demod: DemodConfig) -> np.ndarray:
    """Filtered envelope magnitude at each bit center."""
    spb = rx.samples_per_bit
    if spb < 1:
        raise ConfigError("capture rate must be at least the bitrate")
    n_bits = len(rx.samples) // spb
    length = min(demod.filter_length, len(rx.samples))
    cs = np.concatenate(([0.0 + 0j], np.cumsum(rx.samples)))
    centers = np.arange(n_bits) * spb + spb // 2
    starts = np.clip(centers - length // 2, 0, len(rx.samples) - length)
    filtered = (cs[starts + length] - cs[starts]) / length
    return np.abs(filtered)


def _bimodal_threshold(mags: np.ndarray) -> float:
    """Two-means split point of a magnitude population.

    Iterating threshold -> midpoint of the above/below means converges to a
    fixed point that depends on the magnitude distribution, not on how many
    bits the capture holds. A min/max midpoint would creep upward with
    capture length because the noise maximum is unbounded in n, making BER
    depend on batch size.
    """
    t = 0.5 * (float(mags.min()) + float(mags.max()))
    for _ in range(64):
        hi = mags[mags > t]
        lo = mags[mags <= t]
        if len(hi) == 0 or len(lo) == 0:
            break
        t_new = 0.5 * (float(hi.mean()) + float(lo.mean()))
        if abs(t_new - t) <= 1e-12 * max(abs(t), 1.0):
            break
        t = t_new
    return t


def ap_demodulate(rx: RxCapture, demod: DemodConfig,
                  sync_bits: int = 0) -> np.ndarray:
    """Decide bits by thresholding filtered magnitudes at bit centers.

    The threshold is the two-means split of the frame's magnitudes. When
    the frame starts with the known sync pattern, pass sync_bits to
    calibrate the threshold from the sync levels instead, which also
    handles degenerate all-same payloads.
    """
    mags = bit_magnitudes(rx, demod)
    if sync_bits:
        if sync_bits > len(mags) or sync_bits > len(SYNC_PATTERN):
            raise ConfigError("sync_bits exceeds the frame or pattern length")
        sync = np.asarray(SYNC_PATTERN[:sync_bits])
        ones = mags[:sync_bits][sync == 1]
        zeros = mags[:sync_bits][sync == 0]
        threshold = 0.5 * (ones.mean() + zeros.mean())
    else:
        threshold = _bimodal_threshold(mags)
    return (mags > threshold).astype(np.uint8)


def roundtrip_frame(frame: Frame, link: LinkBudget, demod: DemodConfig,
                    rng: np.random.Generator | None = None,
                    wave_rate_hz: float = 8e6, subcarrier_hz: float = 2e6,
                    sync_bits: int = 0) -> np.ndarray:
    """Modulate, reflect through the link, capture, and demodulate."""
    wave = modulate_frame(frame, wave_rate_hz, subcarrier_hz)
    rx = transmit_backscatter(wave, link, demod, rng)
    return ap_demodulate(rx, demod, sync_bits=sync_bits)


# --- BER simulation ---------------------------------------------------------

def synth_capture(bits: np.ndarray, amplitude: float, noise_sigma: float,
                  rng: np.random.Generator, samples_per_bit: int = 16,
                  sample_rate_hz: float = 16000.0,
                  bitrate_hz: float = 1000.0) -> RxCapture:
    """Capture-rate OOK envelope without the modulator-rate detour.

    Equivalent to transmit_backscatter for whole-cycle decimation blocks up
    to the complex fundamental gain, which the caller folds into amplitude.
    """
    signal = np.repeat(bits.astype(float) * amplitude, samples_per_bit) + 0j
    noise = rng.normal(0.0, noise_sigma / math.sqrt(2.0), len(signal)) \
        + 1j * rng.normal(0.0, noise_sigma / math.sqrt(2.0), len(signal))
    return RxCapture(samples=signal + noise, sample_rate_hz=sample_rate_hz,
                     bitrate_hz=bitrate_hz)


def ber_point(snr_db: float, n_bits: int, rng: np.random.Generator,
              demod: DemodConfig | None = None,
              samples_per_bit: int = 16) -> tuple[float, int]:
    """Monte Carlo BER at a per-sample SNR (signal power over total complex
    noise power during a one-bit). Returns (ber, error_count)."""
    if n_bits < 1:
        raise ConfigError("need at least one bit")
    demod = demod or DemodConfig()
    bits = rng.integers(0, 2, n_bits).astype(np.uint8)
    sigma = 10.0 ** (-snr_db / 20.0)
    rx = synth_capture(bits, 1.0, sigma, rng, samples_per_bit)
    decided = ap_demodulate(rx, demod)
    errors = int(np.count_nonzero(decided != bits))
    return errors / n_bits, errors


def ber_point_waveform_oracle(snr_db: float, n_bits: int,
                              rng: np.random.Generator,
                              demod: DemodConfig | None = None,
                              wave_rate_hz: float = 8e6,
                              subcarrier_hz: float = 2e6) -> tuple[float, int]:
    """Brute-force BER reference through the full modulator-rate waveform.

    Noise is injected at the modulator rate with its power scaled so the
    decimated capture sees the same per-sample SNR as ber_point, and the
    path gain divides out the discrete fundamental gain so both models
    share one signal level.
    """
    if n_bits < 1:
        raise ConfigError("need at least one bit")
    demod = demod or DemodConfig()
    bits = rng.integers(0, 2, n_bits).astype(np.uint8)
    factor = round(wave_rate_hz / demod.sample_rate_hz)
    fundamental = abs(demod_fundamental_gain(wave_rate_hz, subcarrier_hz))
    gain = 1.0 / fundamental
    # per-dimension sigma chosen so block-averaging by `factor` leaves the
    # capture with total complex noise power 10**(-snr/10)
    sigma_hi = 10.0 ** (-snr_db / 20.0) * math.sqrt(factor / 2.0)
    # The modulator-rate waveform is 8000x the capture; stream it in
    # bit-aligned chunks (exact: the switch pattern restarts every bit) and
    # keep the mixer phase on a global sample clock.
    chunk_bits = 500
    bitrate_hz = 1000.0
    env_parts = []
    offset = 0
    for lo in range(0, n_bits, chunk_bits):
        chunk = bits[lo:lo + chunk_bits]
        frame = Frame(bits=tuple(int(b) for b in chunk), bitrate_hz=bitrate_hz)
        wave = modulate_frame(frame, wave_rate_hz, subcarrier_hz)
        t = (offset + np.arange(len(wave.states))) / wave_rate_hz
        mixed = 2.0 * gain * wave.states \
            * np.exp(-2j * math.pi * demod.offset_hz * t)
        noise = rng.normal(0.0, sigma_hi, len(mixed)) \
            + 1j * rng.normal(0.0, sigma_hi, len(mixed))
        env_parts.append((mixed + noise).reshape(-1, factor).mean(axis=1))
        offset += len(wave.states)
    rx = RxCapture(samples=np.concatenate(env_parts),
                   sample_rate_hz=demod.sample_rate_hz, bitrate_hz=bitrate_hz)
    decided = ap_demodulate(rx, demod)
    errors = int(np.count_nonzero(decided != bits))
    return errors / n_bits, errors


# --- hive MAC ----------------------------------------------------------------

QUERY_ADDRESS_BITS = 8
QUERY_COMMAND_DUMP = 0xD1


@dataclass
class InsectNode:
    """One tagged insect in the hive: address, distance, and its log."""

    address: int
    distance_m: float
    store: LogStore = field(default_factory=LogStore)

    def __post_init__(self) -> None:
        if not 0 <= self.address < (1 << QUERY_ADDRESS_BITS):
            raise ConfigError("address must fit 8 bits")
        if self.distance_m <= 0:
            raise ConfigError("distance must be positive")


@dataclass(frozen=True)
class MacEvent:
    insect_address: int
    attempt: int
    address_decoded: bool
    replied: bool
    bits_sent: int
    bit_errors: int
    start_s: float
    end_s: float
    skipped: bool

    @property
    def elapsed_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class MacTranscript:
    events: list[MacEvent] = field(default_factory=list)
    total_elapsed_s: float = 0.0

    def delivered_bits(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for e in self.events:
            if e.replied and not e.skipped:
                out[e.insect_address] = out.get(e.insect_address, 0) + e.bits_sent
        return out

    def fairness_index(self) -> float:
        """Jain index over per-insect delivered payload bits."""
        totals = list(self.delivered_bits().values())
        if not totals:
            return 0.0
        s = sum(totals)
        return s * s / (len(totals) * sum(x * x for x in totals))

    def to_rows(self) -> list[tuple]:
        return [(e.insect_address, e.attempt, int(e.address_decoded),
                 int(e.replied), e.bits_sent, e.bit_errors,
                 round(e.start_s, 6), round(e.end_s, 6),
                 int(e.skipped)) for e in self.events]


def _downlink_decode(address: int, link: LinkBudget, det: DetectorConfig,
                     bitrate_hz: float, rng: np.random.Generator) -> int:
    """OOK query through the insect's envelope detector; returns the address
    the insect heard (possibly garbage when under its floor)."""
    bits = list(SYNC_PATTERN) + [(address >> (7 - k)) & 1 for k in range(8)]
    one_way_dbm = link.tx_power_dbm - free_space_loss_db(link.distance_m,
                                                         link.carrier_hz)
    spb = round(det.sample_rate_hz / bitrate_hz)
    levels = np.where(np.repeat(bits, spb) > 0,
                      float(det.response_volts(one_way_dbm)), det.floor_volts)
    volts = levels + rng.normal(0.0, det.noise_sigma_volts, len(levels))
    mags = volts.reshape(-1, spb).mean(axis=1)
    sync = np.asarray(SYNC_PATTERN)
    threshold = 0.5 * (mags[:8][sync == 1].mean() + mags[:8][sync == 0].mean())
    decoded = (mags[8:] > threshold).astype(int)
    return int("".join(str(b) for b in decoded), 2)


def hive_mac_session(insects: Sequence[InsectNode],
                     rng: np.random.Generator,
                     tx_power_dbm: float = 20.0,
                     carrier_hz: float = 915e6,
                     bitrate_hz: float = 1000.0,
                     demod: DemodConfig | None = None,
                     detector: DetectorConfig | None = None,
                     retries: int = 2,
                     guard_s: float = 0.005) -> MacTranscript:
    """Round-robin query/dump cycle over the hive's tagged insects.

    The reader addresses one insect at a time; an insect replies only when
    it decodes its own address, so out-of-range insects time out and are
    skipped after the retry budget. Replies carry the insect's full log
    behind a sync header.
    """
    demod = demod or DemodConfig()
    detector = detector or DetectorConfig()
    transcript = MacTranscript()
    query_s = (len(SYNC_PATTERN) + QUERY_ADDRESS_BITS) / bitrate_hz
    for insect in insects:
        link = LinkBudget(distance_m=insect.distance_m,
                          tx_power_dbm=tx_power_dbm, carrier_hz=carrier_hz)
        for attempt in range(1, retries + 2):
            start_s = transcript.total_elapsed_s
            transcript.total_elapsed_s += query_s + guard_s
            heard = _downlink_decode(insect.address, link, detector,
                                     bitrate_hz, rng)
            decoded_ok = heard == insect.address
            if not decoded_ok:
                last = attempt == retries + 1
                transcript.events.append(MacEvent(
                    insect.address, attempt, False, False, 0, 0,
                    start_s, transcript.total_elapsed_s, skipped=last))
                continue
            payload = frame_from_records(insect.store.records,
                                         bitrate_hz=bitrate_hz) \
                if insect.store.records else None
            bits = list(SYNC_PATTERN) + (list(payload.bits) if payload else [])
            frame = Frame(bits=tuple(bits), bitrate_hz=bitrate_hz)
            decided = roundtrip_frame(frame, link, demod, rng,
                                      sync_bits=len(SYNC_PATTERN))
            sent = len(frame.bits) - len(SYNC_PATTERN)
            errors = int(np.count_nonzero(
                decided[len(SYNC_PATTERN):] != np.asarray(frame.bits[len(SYNC_PATTERN):])))
            transcript.total_elapsed_s += frame.payload_duration_s + guard_s
            transcript.events.append(MacEvent(
                insect.address, attempt, True, True, sent, errors,
                start_s, transcript.total_elapsed_s, skipped=False))
            break
    return transcript
