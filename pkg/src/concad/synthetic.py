"""Constructed signals with known ground truth.

``pulse_train`` gives Gaussian "R-waves" at known centres for checking the
peak detector. ``make_hr_dataset`` builds a two-class dataset whose classes
differ only in heart rate (50 vs 90 bpm by default) and runs it through the
real preparation pipeline, so the learning code sees the same kind of
bundles it would see from PhysioNet records.
"""

from dataclasses import dataclass

import numpy as np

from .engine.init import RngStream
from .signal.io import APNEA, NORMAL, AnnotationSet, EcgRecord
from .signal.qrs import detect_r_peaks
from .signal.segments import SegmentConfig, filter_unreasonable_hr, segment_with_context


def add_noise(clean, snr_db, rng):
    power = float(np.mean(clean ** 2))
    std = np.sqrt(power / 10 ** (snr_db / 10.0))
    return clean + rng.normal(0.0, std, size=clean.shape)


def gaussian_pulses(n, fs, centers_s, amplitudes=None, width_s=0.02):
    t = np.arange(n) / fs
    x = np.zeros(n)
    amplitudes = np.ones(len(centers_s)) if amplitudes is None else amplitudes
    reach = 6 * width_s
    for c, a in zip(centers_s, amplitudes):
        lo, hi = int(max(0, (c - reach) * fs)), int(min(n, (c + reach) * fs + 2))
        x[lo:hi] += a * np.exp(-0.5 * ((t[lo:hi] - c) / width_s) ** 2)
    return x


def pulse_train(fs=100.0, duration_s=60.0, bpm=60.0, snr_db=20.0, seed=0, drop=(), width_s=0.02):
    """Pulses every ``60/bpm`` s starting half a period in, plus white noise.

    ``drop`` lists pulse indices to leave out. Returns ``(signal, centres_s)``
    where ``centres_s`` holds only the pulses actually present.
    """
    rng = RngStream(seed)
    period = 60.0 / bpm
    centers = np.arange(period / 2, duration_s - 0.05, period)
    keep = np.ones(centers.size, dtype=bool)
    keep[list(drop)] = False
    centers = centers[keep]
    n = int(round(duration_s * fs))
    clean = gaussian_pulses(n, fs, centers, width_s=width_s)
    return add_noise(clean, snr_db, rng), centers


def score_detections(detected_s, truth_s, tolerance_s=0.05):
    """Greedy one-to-one matching; returns ``(true_pos, false_pos, false_neg)``."""
    detected = sorted(detected_s)
    used = np.zeros(len(truth_s), dtype=bool)
    truth = np.asarray(truth_s)
    tp = fp = 0
    for d in detected:
        if truth.size:
            dist = np.abs(truth - d)
            dist[used] = np.inf
            j = int(dist.argmin())
            if dist[j] <= tolerance_s:
                used[j] = True
                tp += 1
                continue
        fp += 1
    return tp, fp, int((~used).sum())


@dataclass
class SyntheticDataset:
    records: list
    annotations: list
    bundles: list
    dropped: int
    config: SegmentConfig
    fs: float


def synthetic_record(record_id, label, n_epochs, epoch_length_s, fs, bpm, rng, snr_db=15.0):
    duration = n_epochs * epoch_length_s
    n = int(round(duration * fs))
    # beat-to-beat variability around a per-record rate
    rate = bpm + rng.normal(0.0, 3.0)
    centers = []
    t = rng.random() * 60.0 / rate
    while t < duration - 0.05:
        centers.append(t)
        t += (60.0 / rate) * (1.0 + 0.03 * rng.normal())
    centers = np.array(centers)
    amps = 1.0 + 0.1 * rng.normal(size=centers.size)
    clean = gaussian_pulses(n, fs, centers, amps)
    clean += 0.1 * np.sin(2 * np.pi * 0.25 * np.arange(n) / fs + rng.random() * 2 * np.pi)
    samples = add_noise(clean, snr_db, rng)
    ann = AnnotationSet(epoch_length_s, [(e, label) for e in range(n_epochs)])
    return EcgRecord(record_id, fs, samples), ann


def make_hr_dataset(n_bundles=200, seed=0, fs=100.0, epoch_length_s=10.0, context=0,
                    bpm=(50.0, 90.0), epochs_per_record=10, resample_per_epoch=30,
                    snr_db=15.0):
    """Two-class dataset: class 0 (normal) beats at ``bpm[0]``, class 1 (apnea) at ``bpm[1]``."""
    if n_bundles % epochs_per_record:
        raise ValueError("n_bundles must be a multiple of epochs_per_record")
    cfg = SegmentConfig(epoch_length_s=epoch_length_s, context=context,
                        resample_per_epoch=resample_per_epoch)
    root = RngStream(seed)
    records, anns, bundles = [], [], []
    dropped = 0
    for r in range(n_bundles // epochs_per_record):
        label = NORMAL if r % 2 == 0 else APNEA
        rng = root.child("record", r)
        rec, ann = synthetic_record(f"syn{r:03d}", label, epochs_per_record, epoch_length_s,
                                    fs, bpm[label], rng, snr_db)
        segs = segment_with_context(rec, ann, cfg, detect_r_peaks(rec))
        kept, d = filter_unreasonable_hr(segs, cfg.hr_min, cfg.hr_max, cfg.min_peaks)
        records.append(rec)
        anns.append(ann)
        bundles.extend(kept)
        dropped += d
    return SyntheticDataset(records, anns, bundles, dropped, cfg, fs)
