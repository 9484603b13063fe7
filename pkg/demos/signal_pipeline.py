"""From raw ECG to model-ready bundles.

Builds a short synthetic recording, finds its R-peaks, derives the interval
(RRI) and amplitude (RPE) series and cuts it into labelled bundles, printing
what each stage produced. Run with ``python demos/signal_pipeline.py``.
"""

import numpy as np

from concad.engine.init import RngStream
from concad.signal.features import raw_rri
from concad.signal.io import APNEA, EcgRecord
from concad.signal.qrs import detect_r_peaks
from concad.signal.segments import SegmentConfig, filter_unreasonable_hr, segment_with_context
from concad.synthetic import pulse_train, score_detections, synthetic_record

# 1. The detector on a pulse train whose beat times we know.
fs = 250.0
x, truth = pulse_train(fs, duration_s=60.0, bpm=75.0, snr_db=10.0, seed=1)
peaks = detect_r_peaks(EcgRecord("pulses", fs, x))
tp, fp, fn = score_detections(peaks / fs, truth)
print(f"pulse train: {truth.size} beats, detected {peaks.size} (tp {tp}, fp {fp}, fn {fn})")

rri = raw_rri(peaks, fs)
print(f"RR intervals: mean {rri.mean():.3f} s (expected {60 / 75:.3f}), sd {rri.std():.4f}")

# 2. A labelled recording: ten one-minute epochs at 90 bpm marked apnea.
record, annotations = synthetic_record("demo", APNEA, 10, 60.0, 100.0, 90.0, RngStream(7))
config = SegmentConfig(epoch_length_s=60.0, context=2, resample_per_epoch=180)
bundles = segment_with_context(record, annotations, config, detect_r_peaks(record))
kept, dropped = filter_unreasonable_hr(bundles, config.hr_min, config.hr_max, config.min_peaks)
print(f"\n{len(annotations)} labelled epochs -> {len(bundles)} bundles with +-{config.context} "
      f"epochs of context, {dropped} dropped by the heart-rate filter")
b = kept[0]
print(f"bundle for epoch {b.epoch_index}: ecg {b.ecg.shape}, rri {b.rri.shape}, rpe {b.rpe.shape}, "
      f"mean HR {b.mean_hr:.1f} bpm")
print(f"RRI range {b.rri.min():.3f}..{b.rri.max():.3f} s, RPE range {b.rpe.min():.2f}..{b.rpe.max():.2f}")
assert np.all(b.rri > 0)
