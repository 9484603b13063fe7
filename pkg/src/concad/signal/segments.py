"""Epoch segmentation with neighbouring context, the heart-rate filter, and augmentation."""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .features import TooFewPeaks, rri_rpe_from_peaks
from .qrs import detect_r_peaks

log = logging.getLogger(__name__)


@dataclass
class SegmentConfig:
    epoch_length_s: float = 60.0
    context: int = 2
    resample_per_epoch: int = 180
    median_window: int = 5
    hr_min: float = 20.0
    hr_max: float = 300.0
    min_peaks: int = 4

    def __post_init__(self):
        if self.context < 0:
            raise ValueError("context must be >= 0")
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ValueError("median window must be a positive odd integer")

    @property
    def width(self):
        return 2 * self.context + 1

    @property
    def expert_length(self):
        return self.resample_per_epoch * self.width

    def ecg_length(self, fs):
        return int(round(self.epoch_length_s * fs)) * self.width


@dataclass
class SegmentBundle:
    label: int
    ecg: np.ndarray
    rri: np.ndarray
    rpe: np.ndarray
    record_id: str = ""
    epoch_index: int = 0
    n_peaks: int = 0          # R-peaks detected in the centre epoch
    mean_hr: float = float("nan")
    valid: bool = True


def _center_stats(peaks, lo, hi, fs):
    inside = peaks[(peaks >= lo) & (peaks < hi)]
    if inside.size >= 2:
        hr = 60.0 / (np.diff(inside).mean() / fs)
    else:
        hr = 60.0 * inside.size / ((hi - lo) / fs)
    return int(inside.size), float(hr)


def segment_with_context(record, annotations, config, peaks=None):
    """One bundle per labelled epoch, with ``config.context`` neighbours each side.

    Neighbours beyond the record edge repeat the edge epoch. Epochs whose
    label lies beyond the end of the record are skipped. Bundles whose window
    has too few peaks are returned with ``valid=False``.
    """
    fs = record.fs
    spe = int(round(annotations.epoch_length_s * fs))
    if abs(annotations.epoch_length_s - config.epoch_length_s) > 1e-9:
        raise ValueError("annotation epoch length differs from the segment config")
    n_epochs = record.samples.size // spe
    if peaks is None:
        peaks = detect_r_peaks(record)
    peaks = np.asarray(peaks, dtype=np.int64)
    c = config.context
    n_res = config.expert_length
    bundles = []
    skipped = 0
    for epoch, label in annotations.labels:
        if epoch >= n_epochs:
            skipped += 1
            continue
        sources = [min(max(epoch + d, 0), n_epochs - 1) for d in range(-c, c + 1)]
        ecg = np.concatenate([record.samples[q * spe : (q + 1) * spe] for q in sources])
        times, amps = [], []
        for j, q in enumerate(sources):
            inside = peaks[(peaks >= q * spe) & (peaks < (q + 1) * spe)]
            times.append((j * spe + inside - q * spe) / fs)
            amps.append(record.samples[inside])
        times = np.concatenate(times)
        amps = np.concatenate(amps)
        n_peaks, hr = _center_stats(peaks, epoch * spe, (epoch + 1) * spe, fs)
        try:
            rri, rpe = rri_rpe_from_peaks(
                times, amps, 0.0, len(sources) * spe / fs, n_res, config.median_window)
            valid = True
        except TooFewPeaks:
            rri = np.full(n_res, np.nan)
            rpe = np.full(n_res, np.nan)
            valid = False
        bundles.append(SegmentBundle(label, ecg, rri, rpe, record.record_id, epoch, n_peaks, hr, valid))
    if skipped:
        log.warning("%s: %d labelled epochs lie beyond the record end", record.record_id, skipped)
    return bundles


def filter_unreasonable_hr(segments, hr_min=20.0, hr_max=300.0, min_peaks=4):
    """Drop bundles with too few centre-epoch peaks or mean HR outside ``[hr_min, hr_max]`` bpm."""
    kept = [
        s for s in segments
        if s.valid and s.n_peaks >= min_peaks and hr_min <= s.mean_hr <= hr_max
    ]
    return kept, len(segments) - len(kept)


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------

TIME_SHIFT = "time_shift"
REVERSE = "reverse"


@dataclass
class AugmentationSpec:
    ops: tuple = (TIME_SHIFT, REVERSE)
    max_shift_fraction: float = 0.1
    enabled: bool = True

    def __post_init__(self):
        self.ops = tuple(self.ops)
        if not 0.0 < self.max_shift_fraction <= 1.0:
            raise ValueError("max_shift_fraction must lie in (0, 1]")
        unknown = set(self.ops) - {TIME_SHIFT, REVERSE}
        if unknown:
            raise ValueError(f"unknown augmentation ops {sorted(unknown)}")


def time_shift(x, t):
    """Circular shift so that the result starts at ``x[t]``."""
    return np.roll(x, -int(t))


def augment(bundle, spec, rng):
    """Return an augmented copy of ``bundle`` using one op drawn uniformly from ``spec.ops``."""
    if not spec.enabled or not spec.ops:
        return bundle
    op = spec.ops[int(rng.integers(len(spec.ops)))]
    if op == REVERSE:
        return replace(bundle, ecg=bundle.ecg[::-1].copy(), rri=bundle.rri[::-1].copy(),
                       rpe=bundle.rpe[::-1].copy())
    n = bundle.ecg.size
    t = int(rng.integers(1, max(1, int(spec.max_shift_fraction * n)) + 1))
    frac = t / n
    te = int(round(frac * bundle.rri.size))
    return replace(bundle, ecg=time_shift(bundle.ecg, t), rri=time_shift(bundle.rri, te),
                   rpe=time_shift(bundle.rpe, te))
