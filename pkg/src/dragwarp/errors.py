"""Exception hierarchy shared across the package.

Every error carries a stable snake_case ``code`` used verbatim by the CLI
(stderr JSON) and the HTTP API (response bodies), so tooling can match on it.
"""

from __future__ import annotations


class DragwarpError(Exception):
    """Base class; ``code`` is the machine-readable identifier."""

    code = "internal_error"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.code)
        self.detail = detail or self.code


class DimensionMismatch(DragwarpError):
    code = "dimension_mismatch"


class NonFiniteValue(DragwarpError):
    code = "non_finite_value"


class BadMagic(DragwarpError):
    code = "bad_magic"


class HeaderParse(DragwarpError):
    code = "header_parse"


class PayloadTruncated(DragwarpError):
    code = "payload_truncated"


class DecodeError(DragwarpError):
    code = "decode_error"


class ShapeMismatch(DragwarpError):
    code = "shape_mismatch"


class DegenerateDepthRange(DragwarpError):
    code = "degenerate_depth_range"


class EmptyMask(DragwarpError):
    code = "empty_mask"


class HandleOutsideMask(DragwarpError):
    code = "handle_outside_mask"


class DegenerateVector(DragwarpError):
    code = "degenerate_vector"


class AmbiguousAxis(DragwarpError):
    code = "ambiguous_axis"


class DuplicateControlPoint(DragwarpError):
    code = "duplicate_control_point"


class SingularSystem(DragwarpError):
    code = "singular_system"


class AllVoid(DragwarpError):
    code = "all_void"


class BadScheduleParams(DragwarpError):
    code = "bad_schedule_params"


class AlphaOutOfRange(DragwarpError):
    code = "alpha_out_of_range"


class EtaOutOfRange(DragwarpError):
    code = "eta_out_of_range"


class ConfigError(DragwarpError):
    code = "bad_config"


class UnknownConfigKey(ConfigError):
    code = "unknown_key"
