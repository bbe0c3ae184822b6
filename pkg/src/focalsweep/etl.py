"""Drive-to-power behavior of an electrically tunable lens.

The lens is driven by a periodic sinusoid. Its optical power follows the
drive through a linear time-invariant low-pass response, so one recorded
cycle of power versus drive phase is enough to look up the power at any time.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .optics import DEFAULT_POWER_BOUND, SweepRange

TWO_PI = 2.0 * math.pi

UP = "up"
DOWN = "down"


class WaveformFormatError(ValueError):
    """A power table is malformed or violates the one-peak-per-cycle shape."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class PowerRangeError(ValueError):
    """Requested power is outside the range reached by the waveform."""


class InfeasibleDriveError(ValueError):
    """No drive can produce the requested sweep within the hardware bound."""


@dataclass(frozen=True)
class DriveWaveform:
    """Sinusoidal drive ``offset + amplitude * sin(phase)`` in volts."""

    offset: float
    amplitude: float
    frequency: float = 60.0

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError(f"drive frequency must be positive, got {self.frequency}")
        if self.amplitude < 0:
            raise ValueError(f"drive amplitude must be non-negative, got {self.amplitude}")

    @property
    def period(self) -> float:
        return 1.0 / self.frequency

    def sample(self, phases: np.ndarray) -> np.ndarray:
        return self.offset + self.amplitude * np.sin(phases)


@dataclass(frozen=True)
class LTIResponse:
    """Low-pass lens response: DC gain in D/V, Butterworth cutoff and order.

    ``cutoff = math.inf`` gives a memoryless gain.
    """

    dc_gain: float
    cutoff: float = 200.0
    order: int = 2

    def __post_init__(self):
        if not self.dc_gain > 0:
            raise ValueError("dc_gain must be positive")
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")
        if self.order not in (1, 2):
            raise ValueError("only first- and second-order responses are modeled")

    def transfer(self, freq_hz) -> np.ndarray:
        """Complex frequency response at ``freq_hz`` (including the DC gain)."""
        f = np.asarray(freq_hz, dtype=float)
        if math.isinf(self.cutoff):
            return self.dc_gain * np.ones_like(f, dtype=complex)
        s = 1j * f / self.cutoff
        if self.order == 1:
            h = 1.0 / (1.0 + s)
        else:
            h = 1.0 / (1.0 + math.sqrt(2.0) * s + s * s)
        return self.dc_gain * h

    def magnitude(self, freq_hz: float) -> float:
        return float(abs(self.transfer(freq_hz)))

    def phase_lag(self, freq_hz: float) -> float:
        """Phase lag in radians (positive means the output trails the drive)."""
        return float(-np.angle(self.transfer(freq_hz)))


@dataclass(frozen=True)
class PowerWaveform:
    """One cycle of optical power sampled against drive phase."""

    phases: np.ndarray
    powers: np.ndarray
    period: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ph = np.asarray(self.phases, dtype=float).copy()
        pw = np.asarray(self.powers, dtype=float).copy()
        ph.setflags(write=False)
        pw.setflags(write=False)
        object.__setattr__(self, "phases", ph)
        object.__setattr__(self, "powers", pw)
        _validate_cycle(ph, pw)
        if not self.period > 0:
            raise ValueError("period must be positive")
        i_max = int(np.argmax(pw))
        i_min = int(np.argmin(pw))
        object.__setattr__(self, "_i_max", i_max)
        object.__setattr__(self, "_i_min", i_min)

    @property
    def frequency(self) -> float:
        return 1.0 / self.period

    @property
    def v_min(self) -> float:
        return float(self.powers[self._i_min])

    @property
    def v_max(self) -> float:
        return float(self.powers[self._i_max])

    @property
    def phase_of_min(self) -> float:
        return float(self.phases[self._i_min])

    @property
    def phase_of_max(self) -> float:
        return float(self.phases[self._i_max])

    def time_of_phase(self, phase):
        return np.mod(phase, TWO_PI) / (TWO_PI * self.frequency)

    def phase_of_time(self, t):
        return np.mod(np.asarray(t, dtype=float) * self.frequency, 1.0) * TWO_PI

    def power_at(self, phase):
        """Linear interpolation of power at ``phase`` (wrapped to one cycle)."""
        scalar = np.ndim(phase) == 0
        out = np.interp(np.mod(phase, TWO_PI), self.phases, self.powers, period=TWO_PI)
        return float(out) if scalar else out

    def power_at_time(self, t):
        return self.power_at(self.phase_of_time(t))

    def segment(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        """Unwrapped (phases, powers) of the rising or falling half-cycle."""
        n = len(self.phases)
        if which == UP:
            start, stop = self._i_min, self._i_max
        elif which == DOWN:
            start, stop = self._i_max, self._i_min
        else:
            raise ValueError(f"segment must be 'up' or 'down', got {which!r}")
        count = (stop - start) % n + 1
        idx = (start + np.arange(count)) % n
        ph = self.phases[idx] + TWO_PI * ((start + np.arange(count)) // n)
        return ph, self.powers[idx]

    def phases_for_power(self, v: float, which: str) -> float:
        """Phase in [0, 2*pi) on the chosen monotone segment where power equals ``v``."""
        if not self.v_min <= v <= self.v_max:
            raise PowerRangeError(
                f"{v:+.4f} D is outside the waveform range "
                f"[{self.v_min:+.4f}, {self.v_max:+.4f}] D")
        ph, pw = self.segment(which)
        if which == DOWN:
            ph, pw = ph[::-1], pw[::-1]
        # pw is now non-decreasing; take the first bracket that reaches v
        k = int(np.searchsorted(pw, v, side="left"))
        if k == 0:
            phase = ph[0]
        else:
            p0, p1 = pw[k - 1], pw[k]
            t = 0.0 if p1 == p0 else (v - p0) / (p1 - p0)
            phase = ph[k - 1] + t * (ph[k] - ph[k - 1])
        return float(np.mod(phase, TWO_PI))

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        buf.write("phase_rad,power_D\n")
        for a, b in zip(self.phases, self.powers):
            buf.write(f"{float(a)!r},{float(b)!r}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _extremum_count(powers: np.ndarray) -> int:
    """Number of direction changes around the closed cycle (plateaus ignored)."""
    d = np.diff(np.append(powers, powers[0]))
    s = np.sign(d)
    s = s[s != 0]
    if len(s) == 0:
        return 0
    return int(np.count_nonzero(s != np.roll(s, 1)))


def _validate_cycle(phases: np.ndarray, powers: np.ndarray) -> None:
    if phases.ndim != 1 or phases.shape != powers.shape:
        raise WaveformFormatError("phase and power columns must be 1-D and equal length")
    if len(phases) < 16:
        raise WaveformFormatError(f"need at least 16 samples per cycle, got {len(phases)}")
    if not (np.all(np.isfinite(phases)) and np.all(np.isfinite(powers))):
        bad = int(np.flatnonzero(~(np.isfinite(phases) & np.isfinite(powers)))[0])
        raise WaveformFormatError("non-finite value", row=bad)
    if phases[0] < 0 or phases[-1] >= TWO_PI:
        raise WaveformFormatError("phases must lie in [0, 2*pi)")
    steps = np.diff(phases)
    if np.any(steps <= 0):
        raise WaveformFormatError("phases are not strictly increasing",
                                  row=int(np.flatnonzero(steps <= 0)[0]) + 1)
    largest_gap = max(steps.max(), phases[0] + TWO_PI - phases[-1])
    if largest_gap > TWO_PI / 8:
        raise WaveformFormatError(
            f"samples leave a gap of {largest_gap:.3f} rad; the cycle is incomplete")
    changes = _extremum_count(powers)
    if changes != 2:
        raise WaveformFormatError(
            f"expected exactly one maximum and one minimum per cycle, found {changes // 2} of each"
            if changes else "waveform is constant")


def load_measured_waveform(records: Iterable | str | Path, frequency: float = 60.0) -> PowerWaveform:
    """Build a waveform from ``(phase_rad, power_D)`` records or a CSV file.

    CSV files have a header line followed by comma-separated rows. Records are
    sorted by phase; duplicate phases are rejected.
    """
    if isinstance(records, (str, Path)):
        with open(records, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise WaveformFormatError("empty waveform file")
            rows = []
            for i, row in enumerate(reader, start=2):
                if not row or not "".join(row).strip():
                    continue
                if len(row) != 2:
                    raise WaveformFormatError("expected two columns", row=i)
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    raise WaveformFormatError(f"not a number: {row}", row=i) from None
    else:
        rows = [(float(a), float(b)) for a, b in records]
    if not rows:
        raise WaveformFormatError("no records")
    arr = np.asarray(rows, dtype=float)
    order = np.argsort(arr[:, 0], kind="stable")
    arr = arr[order]
    dup = np.flatnonzero(np.diff(arr[:, 0]) == 0)
    if len(dup):
        raise WaveformFormatError("duplicate phase", row=int(order[dup[0] + 1]))
    return PowerWaveform(arr[:, 0], arr[:, 1], 1.0 / frequency, meta={"source": "measured"})


def simulate_response(drive: DriveWaveform, lti: LTIResponse, resolution: int = 256) -> PowerWaveform:
    """Steady-state power produced by a periodic drive through the LTI response.

    The drive is sampled on ``resolution`` equally spaced phases and filtered
    harmonic by harmonic, which is exact for a band-limited periodic input.
    """
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    phases = np.arange(resolution) * (TWO_PI / resolution)
    spectrum = np.fft.rfft(drive.sample(phases))
    harmonics = np.arange(len(spectrum)) * drive.frequency
    powers = np.fft.irfft(spectrum * lti.transfer(harmonics), n=resolution)
    return PowerWaveform(phases, powers, drive.period,
                         meta={"source": "simulated", "drive": drive, "lti": lti})


def skewed_waveform(v_low: float, v_high: float, frequency: float = 60.0,
                    skew: float = 0.25, resolution: int = 512) -> PowerWaveform:
    """Non-sinusoidal one-peak waveform with unequal rise and fall times.

    A monotone phase warp moves the peak away from the sinusoidal position,
    so rise and fall take different times, much like a measured lens
    response. The result spans exactly ``[v_low, v_high]``.
    """
    if not -0.9 < skew < 0.9:
        raise ValueError("skew must lie in (-0.9, 0.9)")
    phases = np.arange(resolution) * (TWO_PI / resolution)
    # monotone warp of phase keeps exactly one peak and one trough
    warped = phases + skew * (1.0 - np.cos(phases))
    shape = -np.cos(warped)
    shape = (shape - shape.min()) / (shape.max() - shape.min())
    powers = v_low + (v_high - v_low) * shape
    return PowerWaveform(phases, powers, 1.0 / frequency, meta={"source": "synthetic-skewed"})


def calibrate_drive(target: SweepRange, lti: LTIResponse, frequency: float = 60.0,
                    power_bound: float = DEFAULT_POWER_BOUND,
                    resolution: int = 256, tol: float = 0.01) -> DriveWaveform:
    """Offset and amplitude whose simulated power spans ``target``.

    The response is linear in both parameters, so each is solved directly
    and then checked in closed loop against the re-simulated extrema.
    """
    if max(abs(target.v_low), abs(target.v_high)) > power_bound:
        raise InfeasibleDriveError(
            f"target [{target.v_low:+.2f}, {target.v_high:+.2f}] D exceeds the "
            f"+/-{power_bound} D bound")
    offset = target.center / abs(lti.transfer(0.0))
    unit = simulate_response(DriveWaveform(0.0, 1.0, frequency), lti, resolution)
    half_per_volt = 0.5 * (unit.v_max - unit.v_min)
    amplitude = 0.5 * target.span / half_per_volt
    drive = DriveWaveform(float(offset), float(amplitude), frequency)
    out = simulate_response(drive, lti, resolution)
    if abs(out.v_min - target.v_low) > tol or abs(out.v_max - target.v_high) > tol:
        raise InfeasibleDriveError(
            f"closed-loop check failed: got [{out.v_min:+.4f}, {out.v_max:+.4f}] D")
    return drive


def fit_lti_to_calibration(drive: DriveWaveform, target: SweepRange, order: int = 2) -> LTIResponse:
    """LTI parameters under which ``drive`` produces exactly ``target``.

    The DC gain maps the drive offset onto the range center; the cutoff is
    then chosen so the attenuation at the drive frequency maps the amplitude
    onto the half-span. Used to reproduce a hand-tuned calibration.
    """
    if drive.offset == 0 or drive.amplitude == 0:
        raise ValueError("need a non-zero offset and amplitude")
    gain = target.center / drive.offset
    if gain <= 0:
        raise ValueError("offset and range center must share a sign")
    ratio = 0.5 * target.span / (gain * drive.amplitude)
    if not 0 < ratio <= 1:
        raise InfeasibleDriveError(f"needs a response magnitude of {ratio:.3f} at the drive frequency")
    if ratio == 1:
        return LTIResponse(gain, math.inf, order)
    # Butterworth magnitude 1/sqrt(1 + (f/fc)^(2*order))
    x = (1.0 / ratio ** 2 - 1.0) ** (1.0 / (2 * order))
    return LTIResponse(gain, drive.frequency / x, order)
