"""Penultimate-layer CNN feature export into MQDF files."""

from .backbones import BACKBONES, build_backbone, feature_width
from .export import ExportManifest, export, list_split
from .mqdf import write_mqdf

__version__ = "0.1.0"
