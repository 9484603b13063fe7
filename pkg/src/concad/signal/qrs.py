"""R-peak detection in the style of Hamilton's open-source QRS detector.

Band-pass 8-16 Hz, differentiate, rectify, 80 ms moving average, then
classify peaks of the averaged signal against an adaptive threshold
``noise + 0.3125 * (qrs - noise)`` built from the medians of the last eight
QRS and noise peaks. A 200 ms refractory period suppresses double
detections, and when no beat has been found for 1.5 median RR intervals the
largest skipped peak above half the threshold is recovered. Peaks within
360 ms of a beat and under half its height are taken as T-waves.
"""

import numpy as np
from scipy import signal as sps

from .io import DataError

BAND = (8.0, 16.0)
MA_SECONDS = 0.08
REFRACTORY_S = 0.2
TWAVE_S = 0.36
THRESHOLD_COEF = 0.3125
SEARCHBACK_RR = 1.5
BUFFER = 8
INIT_SECONDS = 8


def _median(buf):
    return float(np.median(buf)) if buf else 0.0


def detection_signal(x, fs):
    """Band-passed, differentiated, rectified and smoothed ECG."""
    if fs <= 2 * BAND[1]:
        raise DataError(f"sampling rate {fs} Hz is too low for the {BAND} Hz band-pass")
    sos = sps.butter(2, BAND, btype="bandpass", fs=fs, output="sos")
    filtered = sps.sosfiltfilt(sos, x)
    deriv = np.abs(np.gradient(filtered))
    width = max(1, int(round(MA_SECONDS * fs)))
    ma = np.convolve(deriv, np.ones(width) / width, mode="same")
    return ma


def detect_r_peaks(record):
    """Return strictly increasing R-peak sample indices for an :class:`EcgRecord`."""
    x = record.samples
    fs = record.fs
    if record.duration_s < 2.0:
        raise DataError(f"{record.record_id}: record shorter than 2 s")
    ma = detection_signal(x, fs)
    peak_max = ma.max()
    if not np.isfinite(peak_max) or peak_max <= 1e-12 * max(1.0, np.abs(x).max()):
        return np.array([], dtype=np.int64)

    refractory = int(round(REFRACTORY_S * fs))
    twave = int(round(TWAVE_S * fs))
    cands, _ = sps.find_peaks(ma, distance=max(1, refractory))
    if cands.size == 0:
        return np.array([], dtype=np.int64)

    n_init = max(1, min(INIT_SECONDS, int(record.duration_s)))
    sec = int(round(fs))
    qrs_buf = [float(ma[i * sec : (i + 1) * sec].max()) for i in range(n_init)]
    noise_buf = [0.0]
    rr_buf = [float(fs)]

    def threshold():
        npk, qpk = _median(noise_buf), _median(qrs_buf)
        return npk + THRESHOLD_COEF * (qpk - npk)

    def push(buf, val):
        buf.append(val)
        if len(buf) > BUFFER:
            del buf[0]

    detections = []
    skipped = []  # (index, value) of sub-threshold peaks since the last beat

    def accept(p):
        if detections:
            push(rr_buf, float(p - detections[-1]))
        detections.append(int(p))
        push(qrs_buf, float(ma[p]))

    for p in cands:
        val = float(ma[p])
        if detections and p - detections[-1] > SEARCHBACK_RR * _median(rr_buf):
            half = 0.5 * threshold()
            pool = [(v, i) for i, v in skipped if i - detections[-1] >= refractory and p - i >= refractory and v > half]
            if pool:
                v, i = max(pool)
                accept(i)
                skipped = [(j, w) for j, w in skipped if j > i]
        if detections and p - detections[-1] < refractory:
            continue
        is_twave = detections and p - detections[-1] < twave and val < 0.5 * ma[detections[-1]]
        if val > threshold() and not is_twave:
            accept(p)
            skipped = []
        else:
            push(noise_buf, val)
            skipped.append((int(p), val))

    return _refine(x, fs, np.array(detections, dtype=np.int64), refractory)


def _refine(x, fs, locs, refractory):
    """Move each detection to the largest deviation of the raw ECG nearby."""
    if locs.size == 0:
        return locs
    half = max(1, int(round(0.1 * fs)))
    out = []
    for p in locs:
        lo, hi = max(0, p - half), min(x.size, p + half + 1)
        seg = x[lo:hi]
        dev = np.abs(seg - np.median(seg))
        out.append(lo + int(dev.argmax()))
    out = np.array(out, dtype=np.int64)
    # enforce refractory spacing after refinement, keeping the stronger peak
    keep = [out[0]]
    for p in out[1:]:
        if p - keep[-1] >= refractory:
            keep.append(p)
        elif abs(x[p]) > abs(x[keep[-1]]):
            keep[-1] = p
    return np.array(keep, dtype=np.int64)
