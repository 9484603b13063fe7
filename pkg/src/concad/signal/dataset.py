"""Dataset directories in, prepared-dataset files out.

A prepared dataset is a directory holding two files:

``manifest.json``
    ``{"format": "concad-prepared", "version": 1, "config": {...},
    "counts": {"records": R, "segments": N, "dropped_hr": D,
    "per_class": {"normal": n0, "apnea": n1}}, "records": [...]}``

``bundles.npz``
    ``ecg`` float64 [N, L_ecg], ``rri`` and ``rpe`` float64 [N, L_expert],
    ``label`` int64 [N], ``epoch_index`` int64 [N], ``n_peaks`` int64 [N],
    ``mean_hr`` float64 [N], ``fs`` float64 [N], ``record_id`` unicode [N].
"""

import glob
import json
import logging
import os
from dataclasses import asdict

import numpy as np

from .io import APNEA, NORMAL, DataError, LabelMap, read_annotations, read_record
from .qrs import detect_r_peaks
from .segments import SegmentBundle, SegmentConfig, filter_unreasonable_hr, segment_with_context

log = logging.getLogger(__name__)

FORMAT = "concad-prepared"
VERSION = 1
ANNOTATION_EXTS = (".apn", ".st", ".ann.txt")


def find_records(data_dir):
    """Return ``[(record_base, annotation_path, annotation_format)]`` with labels available."""
    out = []
    heads = sorted(glob.glob(os.path.join(data_dir, "*.hea")) + glob.glob(os.path.join(data_dir, "*.csv")))
    for head in heads:
        base = os.path.splitext(head)[0]
        if head.endswith(".csv") and os.path.exists(base + ".hea"):
            continue
        for ext in ANNOTATION_EXTS:
            if os.path.exists(base + ext):
                out.append((base, base + ext, "text" if ext.endswith(".txt") else "wfdb_ann"))
                break
    return out


def prepare_record(base, ann_path, ann_fmt, config, label_map=None, strict=True):
    record = read_record(base)
    ann = read_annotations(ann_path, ann_fmt, record.fs, config.epoch_length_s, label_map, strict)
    peaks = detect_r_peaks(record)
    return record, segment_with_context(record, ann, config, peaks)


def prepare_directory(data_dir, config, label_map=None, strict=True):
    """Segment every labelled record of ``data_dir`` and apply the HR filter.

    Returns ``(bundles, report)``; ``report`` carries per-record counts.
    """
    found = find_records(data_dir)
    if not found:
        raise DataError(f"no labelled records in {data_dir}")
    kept_all, per_record, dropped_total = [], [], 0
    fs_values = set()
    for base, ann_path, fmt in found:
        record, bundles = prepare_record(base, ann_path, fmt, config, label_map, strict)
        fs_values.add(record.fs)
        kept, dropped = filter_unreasonable_hr(bundles, config.hr_min, config.hr_max, config.min_peaks)
        kept_all.extend(kept)
        dropped_total += dropped
        per_record.append({"record_id": record.record_id, "segments": len(bundles),
                           "kept": len(kept), "dropped_hr": dropped})
        log.info("%s: %d segments, %d dropped", record.record_id, len(bundles), dropped)
    if len(fs_values) > 1:
        raise DataError(f"records have mixed sampling rates {sorted(fs_values)}")
    report = {
        "records": len(found),
        "segments": len(kept_all),
        "dropped_hr": dropped_total,
        "per_class": class_counts(kept_all),
        "fs": fs_values.pop(),
        "per_record": per_record,
    }
    return kept_all, report


def class_counts(bundles):
    labels = [b.label for b in bundles]
    return {"normal": labels.count(NORMAL), "apnea": labels.count(APNEA)}


def save_prepared(path, bundles, config, extra=None, fs=None):
    if not bundles:
        raise DataError("refusing to write an empty prepared dataset")
    os.makedirs(path, exist_ok=True)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "config": asdict(config),
        "counts": {"segments": len(bundles), "per_class": class_counts(bundles)},
    }
    manifest.update(extra or {})
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    np.savez(
        os.path.join(path, "bundles.npz"),
        ecg=np.stack([b.ecg for b in bundles]),
        rri=np.stack([b.rri for b in bundles]),
        rpe=np.stack([b.rpe for b in bundles]),
        label=np.array([b.label for b in bundles], dtype=np.int64),
        epoch_index=np.array([b.epoch_index for b in bundles], dtype=np.int64),
        n_peaks=np.array([b.n_peaks for b in bundles], dtype=np.int64),
        mean_hr=np.array([b.mean_hr for b in bundles], dtype=np.float64),
        fs=np.full(len(bundles), np.nan if fs is None else float(fs)),
        record_id=np.array([b.record_id for b in bundles], dtype=str),
    )
    return manifest


def load_prepared(path):
    """Return ``(bundles, manifest, segment_config)``."""
    mpath = os.path.join(path, "manifest.json")
    if not os.path.exists(mpath):
        raise DataError(f"{path}: not a prepared dataset (manifest.json missing)")
    with open(mpath) as f:
        manifest = json.load(f)
    if manifest.get("format") != FORMAT:
        raise DataError(f"{path}: unexpected format {manifest.get('format')!r}")
    if manifest.get("version") != VERSION:
        raise DataError(f"{path}: unsupported version {manifest.get('version')}")
    with np.load(os.path.join(path, "bundles.npz")) as z:
        arrays = {k: z[k] for k in z.files}
    bundles = [
        SegmentBundle(
            label=int(arrays["label"][i]),
            ecg=arrays["ecg"][i],
            rri=arrays["rri"][i],
            rpe=arrays["rpe"][i],
            record_id=str(arrays["record_id"][i]),
            epoch_index=int(arrays["epoch_index"][i]),
            n_peaks=int(arrays["n_peaks"][i]),
            mean_hr=float(arrays["mean_hr"][i]),
        )
        for i in range(arrays["label"].size)
    ]
    return bundles, manifest, SegmentConfig(**manifest["config"])


def default_label_map():
    return LabelMap()
