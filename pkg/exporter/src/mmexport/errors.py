"""Exporter exception types."""


class CatalogError(ValueError):
    """The input catalog file is malformed."""


class EncoderError(ValueError):
    """An encoder identifier cannot be resolved or loaded."""
