"""Feature-map exporter: taps pretrained CNNs over chest images and
writes FMAP containers consumed by the mixmap toolkit."""

from .export import ExportError, export_maps, write_fmap
from .finetune import FinetuneError, finetune_baseline, write_curves_csv
from .nets import (
    DEFAULT_TAPS,
    FULL_TAPS,
    DarkNet19,
    TapError,
    TapSpec,
    build_model,
    parse_taps,
)
from .preprocess import PreprocessError, preprocess_image, to_network_input

__version__ = "0.1.0"
