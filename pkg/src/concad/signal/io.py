"""Readers and writers for ECG records and apnea annotations.

Supported record formats: WFDB format 16 and 212 signal files with their
``.hea`` header, and a one-column CSV whose first line is ``fs=<Hz>``.
Annotations come either as MIT-format binary WFDB annotation files
(``.apn``, ``.st``, ...) or as ``<sample_index> <code> [aux]`` text lines.
"""

import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

APNEA, NORMAL = 1, 0
CLASS_NAMES = {NORMAL: "normal", APNEA: "apnea"}


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass
class EcgRecord:
    record_id: str
    fs: float
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.fs <= 0:
            raise DataError(f"{self.record_id}: sampling rate must be positive, got {self.fs}")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError(f"{self.record_id}: samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"{self.record_id}: non-finite samples")

    @property
    def duration_s(self):
        return self.samples.size / self.fs


@dataclass
class AnnotationSet:
    epoch_length_s: float
    labels: list  # [(epoch_index, class)]
    skipped: int = 0

    def __post_init__(self):
        idx = [e for e, _ in self.labels]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DataError("annotation epoch indices must be strictly increasing")
        if any(c not in (APNEA, NORMAL) for _, c in self.labels):
            raise DataError("annotation classes must be binary")

    def __len__(self):
        return len(self.labels)


# --------------------------------------------------------------------------
# header files
# --------------------------------------------------------------------------

@dataclass
class SignalSpec:
    file_name: str
    fmt: int
    gain: float
    baseline: int
    units: str
    description: str = ""


@dataclass
class Header:
    record_name: str
    n_signals: int
    fs: float
    n_samples: int
    signals: list = field(default_factory=list)


def _parse_gain(token, adc_zero):
    # forms: "200", "200(0)", "200(0)/mV", "200/mV"
    units = "mV"
    if "/" in token:
        token, units = token.split("/", 1)
    baseline = adc_zero
    if "(" in token:
        token, rest = token.split("(", 1)
        baseline = int(rest.rstrip(")"))
    gain = float(token) if token else 0.0
    return (gain if gain != 0 else 200.0), baseline, units


def read_header(path):
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty header")
    first = lines[0].split()
    name = first[0].split("/")[0]
    n_sig = int(first[1])
    fs = float(first[2].split("/")[0].split("(")[0]) if len(first) > 2 else 250.0
    n_samp = int(first[3]) if len(first) > 3 else 0
    if fs <= 0:
        raise DataError(f"{path}: sampling rate must be positive")
    signals = []
    for ln in lines[1 : 1 + n_sig]:
        tok = ln.split()
        fmt = int(tok[1].split("x")[0].split(":")[0].split("+")[0])
        adc_zero = int(tok[4]) if len(tok) > 4 else 0
        gain, baseline, units = _parse_gain(tok[2], adc_zero) if len(tok) > 2 else (200.0, 0, "mV")
        desc = " ".join(tok[8:]) if len(tok) > 8 else ""
        signals.append(SignalSpec(tok[0], fmt, gain, baseline, units, desc))
    if len(signals) != n_sig:
        raise DataError(f"{path}: header declares {n_sig} signals but lists {len(signals)}")
    return Header(name, n_sig, fs, n_samp, signals)


def write_header(path, record_name, fs, n_samples, fmt, gain, baseline=0,
                 description="ECG", dat_name=None):
    dat_name = dat_name or f"{record_name}.dat"
    with open(path, "w") as f:
        f.write(f"{record_name} 1 {fs:g} {n_samples}\n")
        f.write(f"{dat_name} {fmt} {gain:g}({baseline})/mV 12 0 0 0 0 {description}\n")


# --------------------------------------------------------------------------
# signal files
# --------------------------------------------------------------------------

def decode_212(raw):
    """Unpack format-212 bytes into signed 12-bit integers."""
    raw = np.frombuffer(raw, dtype=np.uint8)
    n_triples = raw.size // 3
    tail = raw.size - 3 * n_triples
    b = raw[: 3 * n_triples].reshape(-1, 3).astype(np.int32)
    first = b[:, 0] | ((b[:, 1] & 0x0F) << 8)
    second = b[:, 2] | ((b[:, 1] & 0xF0) << 4)
    out = np.empty(2 * n_triples, dtype=np.int32)
    out[0::2] = first
    out[1::2] = second
    if tail >= 2:
        extra = raw[3 * n_triples].astype(np.int32) | ((raw[3 * n_triples + 1].astype(np.int32) & 0x0F) << 8)
        out = np.append(out, extra)
    out[out > 2047] -= 4096
    return out


def encode_212(values):
    v = np.asarray(values, dtype=np.int64)
    if np.any(v < -2048) or np.any(v > 2047):
        raise DataError("format 212 holds 12-bit values in [-2048, 2047]")
    v = v & 0xFFF
    if v.size % 2:
        v = np.append(v, 0)
    a, b = v[0::2], v[1::2]
    out = np.empty((a.size, 3), dtype=np.uint8)
    out[:, 0] = a & 0xFF
    out[:, 1] = ((a >> 8) & 0x0F) | (((b >> 8) & 0x0F) << 4)
    out[:, 2] = b & 0xFF
    return out.tobytes()


def _record_paths(path):
    base = str(path)
    for ext in (".hea", ".dat", ".csv"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    return base


def read_record(path, fmt=None, channel=None):
    """Read one ECG channel in physical units.

    ``fmt`` is ``"wfdb16"``, ``"wfdb212"``, ``"csv"`` or None to infer it
    from the files present. ``channel`` selects a signal by index or by a
    substring of its description; the first signal whose description
    mentions ECG is used by default.
    """
    base = _record_paths(path)
    record_id = os.path.basename(base)
    if fmt is None:
        if os.path.exists(base + ".hea"):
            fmt = "wfdb"
        elif os.path.exists(base + ".csv"):
            fmt = "csv"
        else:
            raise DataError(f"no record found at {base}")
    if fmt == "csv":
        return read_csv_record(base + ".csv" if not str(path).endswith(".csv") else path)
    if fmt not in ("wfdb", "wfdb16", "wfdb212"):
        raise DataError(f"unknown record format {fmt!r}")
    hdr = read_header(base + ".hea")
    idx = _pick_channel(hdr, channel)
    spec = hdr.signals[idx]
    want = {"wfdb16": 16, "wfdb212": 212}.get(fmt)
    if want is not None and spec.fmt != want:
        raise DataError(f"{record_id}: header declares format {spec.fmt}, expected {want}")
    # all signals of one record share one interleaved file here
    group = [s for s in hdr.signals if s.file_name == spec.file_name]
    pos = group.index(spec)
    if any(s.fmt != spec.fmt for s in group):
        raise DataError(f"{record_id}: mixed formats within {spec.file_name}")
    dat = os.path.join(os.path.dirname(base), spec.file_name)
    with open(dat, "rb") as f:
        raw = f.read()
    if spec.fmt == 16:
        if len(raw) % 2:
            raise DataError(f"{record_id}: truncated format-16 file")
        digital = np.frombuffer(raw, dtype="<i2").astype(np.int32)
    elif spec.fmt == 212:
        digital = decode_212(raw)
    else:
        raise DataError(f"{record_id}: unsupported WFDB format {spec.fmt}")
    n_frames = digital.size // len(group)
    if hdr.n_samples and n_frames < hdr.n_samples:
        raise DataError(f"{record_id}: truncated signal file ({n_frames} < {hdr.n_samples} samples)")
    if hdr.n_samples:
        n_frames = hdr.n_samples
    digital = digital[: n_frames * len(group)].reshape(n_frames, len(group))[:, pos]
    samples = (digital - spec.baseline) / spec.gain
    return EcgRecord(record_id, hdr.fs, samples)


def _pick_channel(hdr, channel):
    if isinstance(channel, int):
        if not 0 <= channel < hdr.n_signals:
            raise DataError(f"channel {channel} out of range")
        return channel
    key = (channel or "ECG").upper()
    for i, s in enumerate(hdr.signals):
        if key in s.description.upper():
            return i
    if channel is None:
        return 0
    raise DataError(f"no signal matching {channel!r}")


def write_wfdb_record(base, record, fmt=16, gain=200.0, baseline=0):
    """Write ``record`` as ``<base>.hea`` + ``<base>.dat``."""
    digital = np.round(record.samples * gain + baseline).astype(np.int64)
    if fmt == 16:
        if np.any(np.abs(digital) > 32767):
            raise DataError("values exceed the format-16 range")
        raw = digital.astype("<i2").tobytes()
    elif fmt == 212:
        raw = encode_212(digital)
    else:
        raise DataError(f"unsupported WFDB format {fmt}")
    name = os.path.basename(base)
    with open(base + ".dat", "wb") as f:
        f.write(raw)
    write_header(base + ".hea", name, record.fs, record.samples.size, fmt, gain, baseline)


def read_csv_record(path):
    with open(path) as f:
        head = f.readline().strip()
        if not head.startswith("fs="):
            raise DataError(f"{path}: first line must be 'fs=<Hz>'")
        fs = float(head[3:])
        values = [float(ln) for ln in f if ln.strip()]
    record_id = os.path.splitext(os.path.basename(path))[0]
    return EcgRecord(record_id, fs, np.array(values))


def write_csv_record(path, record):
    with open(path, "w") as f:
        f.write(f"fs={float(record.fs)!r}\n")
        for v in record.samples:
            f.write(f"{float(v)!r}\n")


# --------------------------------------------------------------------------
# annotations
# --------------------------------------------------------------------------

# WFDB annotation codes used by the apnea databases
ANN_SYMBOLS = {1: "N", 8: "A", 22: '"', 28: "+", 14: "~", 16: "|"}
ANN_CODES = {s: c for c, s in ANN_SYMBOLS.items()}

SKIP, NUM, SUB, CHAN, AUX = 59, 60, 61, 62, 63


@dataclass
class LabelMap:
    """Maps annotation codes or aux strings to classes.

    A code listed in ``codes`` decides the class; otherwise a non-empty aux
    string is tokenized and any token in ``apnea_aux`` means apnea.
    """

    codes: dict = field(default_factory=lambda: {"A": APNEA, "N": NORMAL})
    apnea_aux: frozenset = frozenset({"H", "HA", "OA", "CA", "CAA", "X", "XA"})

    def classify(self, code, aux=""):
        if code in self.codes:
            return self.codes[code]
        if aux and aux.strip():
            return APNEA if any(t in self.apnea_aux for t in aux.split()) else NORMAL
        return None


def read_wfdb_annotations(path):
    """Parse a MIT-format annotation file into ``[(sample, symbol, aux)]``."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) % 2:
        data = data[:-1]
    pairs = np.frombuffer(data, dtype=np.uint8).reshape(-1, 2)
    out = []
    t = 0
    i = 0
    n = pairs.shape[0]
    while i < n:
        word = int(pairs[i, 0]) | (int(pairs[i, 1]) << 8)
        code, value = word >> 10, word & 0x3FF
        if code == 0 and value == 0:
            break
        if code == SKIP:
            if i + 2 >= n:
                raise DataError(f"{path}: truncated SKIP field")
            hi = int(pairs[i + 1, 0]) | (int(pairs[i + 1, 1]) << 8)
            lo = int(pairs[i + 2, 0]) | (int(pairs[i + 2, 1]) << 8)
            interval = (hi << 16) | lo
            if interval >= 1 << 31:
                interval -= 1 << 32
            t += interval
            i += 3
            continue
        if code in (NUM, SUB, CHAN):
            i += 1
            continue
        if code == AUX:
            length = value
            nbytes = length + (length & 1)
            start = 2 * (i + 1)
            text = data[start : start + length].decode("latin-1")
            if out:
                s, sym, _ = out[-1]
                out[-1] = (s, sym, text.rstrip("\x00"))
            i += 1 + nbytes // 2
            continue
        t += value
        out.append((t, ANN_SYMBOLS.get(code, str(code)), ""))
        i += 1
    return out


def write_wfdb_annotations(path, entries):
    """Write ``[(sample, symbol, aux)]`` in MIT annotation format."""
    buf = bytearray()
    prev = 0
    for sample, symbol, aux in entries:
        code = ANN_CODES.get(symbol, None)
        if code is None:
            code = int(symbol)
        delta = sample - prev
        if delta < 0:
            raise DataError("annotations must be in time order")
        if delta > 1023:
            buf += struct.pack("<H", SKIP << 10)
            buf += struct.pack("<HH", (delta >> 16) & 0xFFFF, delta & 0xFFFF)
            delta = 0
        buf += struct.pack("<H", (code << 10) | delta)
        if aux:
            raw = aux.encode("latin-1")
            buf += struct.pack("<H", (AUX << 10) | len(raw))
            buf += raw + (b"\x00" if len(raw) & 1 else b"")
        prev = sample
    buf += b"\x00\x00"
    with open(path, "wb") as f:
        f.write(bytes(buf))


def read_text_annotations(path):
    out = []
    with open(path) as f:
        for ln in f:
            tok = ln.split(None, 2)
            if not tok or tok[0].startswith("#"):
                continue
            if len(tok) < 2:
                raise DataError(f"{path}: malformed annotation line {ln.strip()!r}")
            out.append((int(tok[0]), tok[1], tok[2].strip() if len(tok) > 2 else ""))
    return out


def write_text_annotations(path, entries):
    with open(path, "w") as f:
        for sample, code, aux in entries:
            f.write(f"{sample} {code} {aux}".rstrip() + "\n")


def read_annotations(path, fmt="text", fs=100.0, epoch_length_s=60.0,
                     label_map=None, strict=True):
    """Read epoch labels.

    Each annotation's epoch is ``sample // (epoch_length_s * fs)``. In strict
    mode an unmapped code or a repeated epoch raises; in lenient mode it is
    skipped and counted in ``AnnotationSet.skipped``.
    """
    label_map = label_map or LabelMap()
    if fmt == "text":
        entries = read_text_annotations(path)
    elif fmt == "wfdb_ann":
        entries = read_wfdb_annotations(path)
    else:
        raise DataError(f"unknown annotation format {fmt!r}")
    if not entries:
        raise DataError(f"{path}: no labels")
    samples_per_epoch = epoch_length_s * fs
    labels = []
    skipped = 0
    for sample, code, aux in entries:
        cls = label_map.classify(code, aux)
        epoch = int(sample // samples_per_epoch)
        problem = None
        if cls is None:
            problem = f"unmapped annotation code {code!r} (aux {aux!r}) at sample {sample}"
        elif labels and epoch <= labels[-1][0]:
            problem = f"duplicate or out-of-order label for epoch {epoch}"
        if problem:
            if strict:
                raise DataError(f"{path}: {problem}")
            skipped += 1
            continue
        labels.append((epoch, cls))
    if not labels:
        raise DataError(f"{path}: no labels")
    if skipped:
        log.warning("%s: skipped %d annotations", path, skipped)
    return AnnotationSet(epoch_length_s, labels, skipped)
