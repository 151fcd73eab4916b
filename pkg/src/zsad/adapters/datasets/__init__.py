from zsad.adapters.datasets.converters import convert_flat, convert_mvtec
from zsad.adapters.datasets.manifest import load_manifest, manifest_from_dict, save_manifest
from zsad.adapters.datasets.preprocess import Preprocessor, load_sample
from zsad.adapters.datasets.synthetic import generate_synthetic_dataset
from zsad.adapters.datasets.torch_dataset import ManifestDataset

__all__ = [
    "ManifestDataset",
    "Preprocessor",
    "convert_flat",
    "convert_mvtec",
    "generate_synthetic_dataset",
    "load_manifest",
    "load_sample",
    "manifest_from_dict",
    "save_manifest",
]
