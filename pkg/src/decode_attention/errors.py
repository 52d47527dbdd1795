"""Exception hierarchy shared by every module."""


class DecodeAttentionError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DecodeAttentionError, ValueError):
    """Tensor extents are incompatible with an operation."""


class ConfigError(DecodeAttentionError, ValueError):
    """An attention, sharding or hardware configuration is inconsistent."""


class ParameterError(DecodeAttentionError, ValueError):
    """A scalar parameter is out of its valid range."""


class StateError(DecodeAttentionError, RuntimeError):
    """A cache is in a state that does not admit the requested operation."""


class CapacityError(DecodeAttentionError, RuntimeError):
    """A fixed-capacity page pool has no free pages left."""


class CacheIndexError(DecodeAttentionError, IndexError):
    """A requested row lies outside the stored sequence."""


class UsageError(DecodeAttentionError, ValueError):
    """A caller supplied an empty or malformed request."""
