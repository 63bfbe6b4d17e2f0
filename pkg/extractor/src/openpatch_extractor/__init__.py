"""Patch-embedding extraction from pretrained 3D backbones into OPBK files."""

__version__ = "0.1.0"

from .backbones import BACKBONES, LAYER_NAMES, create_backbone, octahedral_rotations
from .dataset import CloudSample, load_dataset
from .extract import extract, extract_records, load_backbone, sample_features, save_checkpoint
from .opbk_writer import EmbeddingRecord, pack_records, write_records
from .spec import ExtractionSpec

__all__ = [
    "BACKBONES",
    "LAYER_NAMES",
    "CloudSample",
    "EmbeddingRecord",
    "ExtractionSpec",
    "create_backbone",
    "extract",
    "extract_records",
    "load_backbone",
    "load_dataset",
    "octahedral_rotations",
    "pack_records",
    "sample_features",
    "save_checkpoint",
    "write_records",
]
