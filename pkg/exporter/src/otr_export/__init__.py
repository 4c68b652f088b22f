"""otr-export: bridge from torch MLP actor checkpoints to the otr network
interchange JSON, with bundled verification samples."""

from .export import (
    ExportManifest,
    UnsupportedLayerError,
    export,
    interchange_dict,
    load_checkpoint,
    manifest_from_module,
    manifest_from_state_dict,
    sample_records,
)

__version__ = "0.1.0"
