"""Exception hierarchy shared across the package."""


class ConvKgqaError(Exception):
    """Base class for all package errors."""


class DimensionError(ConvKgqaError):
    """Tensor/vector shapes are inconsistent with the operation."""


class ContractError(ConvKgqaError):
    """A caller violated an API precondition (wrong state, wrong usage order)."""


class NumericError(ConvKgqaError):
    """A computation produced NaN/Inf; message names the offending primitive."""


class ParseError(ConvKgqaError):
    """A data file is malformed; message carries the location."""


class EmptyGraphError(ConvKgqaError):
    """A graph operation received an empty graph."""


class GraphLookupError(ConvKgqaError):
    """An entity/relation id or key does not exist in the graph."""


class GenerationError(ConvKgqaError):
    """Synthetic corpus generation could not satisfy the request."""


class ConfigurationError(ConvKgqaError):
    """Invalid or missing configuration (files, modes, variants)."""


class MissingArtifactError(ConvKgqaError):
    """A pipeline stage input is absent; message names the producing command."""
