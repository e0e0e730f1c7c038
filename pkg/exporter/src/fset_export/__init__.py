"""Frozen-backbone embedding exporter producing FSET1 feature files."""

from .backbones import DECLARED_DIMS, DimensionMismatchError, WeightsUnavailableError, build_backbone
from .datasets import DatasetUnavailableError, load_core50_directory
from .export import ExportSpec, export

__version__ = "0.1.0"
