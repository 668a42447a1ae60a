"""Dataset ingestion, retrieval splits and preprocessing."""

from mbanet.data.augment import (
    AugmentationConfig,
    ImageSource,
    augment_train,
    color_jitter,
    flip,
    image_rng,
    load_image,
    normalize,
    prepare_eval,
)
from mbanet.data.dataset import IdentityDataset, ImageRecord, scan_dataset, scan_distractors
from mbanet.data.split import DISTRACTOR_LABEL, RetrievalSplit, export_split, load_split, make_split
from mbanet.data.synthetic import make_synthetic_dataset

__all__ = [
    "AugmentationConfig", "ImageSource", "augment_train", "color_jitter", "flip", "image_rng",
    "load_image", "normalize", "prepare_eval",
    "IdentityDataset", "ImageRecord", "scan_dataset", "scan_distractors",
    "DISTRACTOR_LABEL", "RetrievalSplit", "export_split", "load_split", "make_split",
    "make_synthetic_dataset",
]
