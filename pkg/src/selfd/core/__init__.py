from .types import (
    COMMANDS,
    DEFAULT_NUM_WAYPOINTS,
    DEFAULT_WAYPOINT_PERIOD,
    Command,
    LabeledSample,
    Observation,
    PseudoLabeledSample,
    SamplingKind,
    ValidationResult,
    WaypointPlan,
    validate_sample,
)
from .manifest import (
    DatasetManifest,
    ManifestChecksumError,
    ManifestError,
    ManifestImageError,
    ManifestMissingError,
    ManifestRecord,
    ManifestVersionError,
    labeled_record,
    load_image,
    load_image_u8,
    pseudo_record,
    read_manifest,
    save_image,
    unlabeled_record,
    write_manifest,
)

__all__ = [
    "COMMANDS",
    "DEFAULT_NUM_WAYPOINTS",
    "DEFAULT_WAYPOINT_PERIOD",
    "Command",
    "LabeledSample",
    "Observation",
    "PseudoLabeledSample",
    "SamplingKind",
    "ValidationResult",
    "WaypointPlan",
    "validate_sample",
    "DatasetManifest",
    "ManifestChecksumError",
    "ManifestError",
    "ManifestImageError",
    "ManifestMissingError",
    "ManifestRecord",
    "ManifestVersionError",
    "labeled_record",
    "load_image",
    "load_image_u8",
    "pseudo_record",
    "read_manifest",
    "save_image",
    "unlabeled_record",
    "write_manifest",
]
