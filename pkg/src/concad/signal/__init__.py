from .dataset import find_records, load_prepared, prepare_directory, prepare_record, save_prepared
from .features import (
    TooFewPeaks,
    cubic_resample,
    derive_rri_rpe,
    median_smooth,
    raw_rri,
    rri_rpe_from_peaks,
)
from .io import (
    APNEA,
    NORMAL,
    AnnotationSet,
    DataError,
    EcgRecord,
    LabelMap,
    decode_212,
    encode_212,
    read_annotations,
    read_csv_record,
    read_record,
    read_text_annotations,
    read_wfdb_annotations,
    write_csv_record,
    write_text_annotations,
    write_wfdb_annotations,
    write_wfdb_record,
)
from .qrs import detect_r_peaks
from .segments import (
    REVERSE,
    TIME_SHIFT,
    AugmentationSpec,
    SegmentBundle,
    SegmentConfig,
    augment,
    filter_unreasonable_hr,
    segment_with_context,
    time_shift,
)
