"""RR-interval and R-peak-envelope series."""

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import median_filter as _ndi_median

from .io import DataError

MIN_PEAKS = 4


class TooFewPeaks(DataError):
    pass


def median_smooth(x, window=5):
    """Running median, edges reflected about the end sample.

    Reflection (rather than replicating the end value) lets a spike on the
    first or last sample be outvoted like any other single-sample spike.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"median window must be a positive odd integer, got {window}")
    return _ndi_median(np.asarray(x, dtype=np.float64), size=window, mode="mirror")


def cubic_resample(t, y, t_new):
    """Not-a-knot cubic spline through ``(t, y)`` evaluated at ``t_new``.

    Points outside the knot range take the value of the nearest end knot.
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    t_new = np.asarray(t_new, dtype=np.float64)
    if t.size < 2:
        raise TooFewPeaks("interpolation needs at least two knots")
    if np.any(np.diff(t) <= 0):
        raise ValueError("knot times must be strictly increasing")
    inside = np.clip(t_new, t[0], t[-1])
    if t.size < 4:
        return np.interp(inside, t, y) if t.size == 2 else CubicSpline(t, y, bc_type="natural")(inside)
    return CubicSpline(t, y, bc_type="not-a-knot")(inside)


def rri_rpe_from_peaks(peak_times, amplitudes, t_start, t_end, resample_len, median_window=5):
    """Build resampled RRI (seconds) and RPE series over ``[t_start, t_end)``.

    Each interval is placed at the time of the later of its two peaks.
    """
    peak_times = np.asarray(peak_times, dtype=np.float64)
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    if peak_times.size < MIN_PEAKS:
        raise TooFewPeaks(f"{peak_times.size} peaks in window, need {MIN_PEAKS}")
    grid = np.linspace(t_start, t_end, resample_len, endpoint=False)
    rri = median_smooth(np.diff(peak_times), median_window)
    rpe = median_smooth(amplitudes, median_window)
    rri_res = cubic_resample(peak_times[1:], rri, grid)
    # spline overshoot must not produce non-physical intervals
    rri_res = np.clip(rri_res, rri.min(), rri.max())
    rpe_res = cubic_resample(peak_times, rpe, grid)
    return rri_res, rpe_res


def derive_rri_rpe(record, peaks, window, resample_len, median_window=5):
    """RRI/RPE series for the peaks of ``record`` inside ``window = (t0, t1)`` seconds."""
    t0, t1 = window
    peaks = np.asarray(peaks, dtype=np.int64)
    times = peaks / record.fs
    sel = (times >= t0) & (times < t1)
    return rri_rpe_from_peaks(
        times[sel], record.samples[peaks[sel]], t0, t1, resample_len, median_window)


def raw_rri(peaks, fs):
    return np.diff(np.asarray(peaks, dtype=np.float64)) / fs
