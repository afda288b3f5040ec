"""Bridge from a product catalog (titles, descriptions, images) to the
mmfuse dataset formats, using pluggable pretrained encoders."""

from .catalog import CatalogRow, read_catalog
from .encoders import resolve_image_encoder, resolve_text_encoder
from .export import ExportError, ExportJob, export

__version__ = "0.1.0"

__all__ = [
    "CatalogRow",
    "ExportError",
    "ExportJob",
    "export",
    "read_catalog",
    "resolve_image_encoder",
    "resolve_text_encoder",
]
