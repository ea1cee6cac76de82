"""Exception hierarchy shared by every module."""


class TransluceError(Exception):
    """Base class for all toolkit errors."""


class OutOfRange(TransluceError, ValueError):
    def __init__(self, name, value, lo=None, hi=None):
        self.name = name
        self.value = value
        msg = f"{name}={value!r} outside range"
        if lo is not None:
            msg += f" [{lo}, {hi}]"
        super().__init__(msg)


class InvalidT(TransluceError, ValueError):
    pass


class LayoutMismatch(TransluceError, ValueError):
    pass


class NotUnit(TransluceError, ValueError):
    pass


class EmptyEnvMap(TransluceError, ValueError):
    pass


class MaskEmpty(TransluceError, ValueError):
    pass


class ShapeMismatch(TransluceError, ValueError):
    pass


class ZeroExtinction(TransluceError, ValueError):
    pass


class NotWatertight(TransluceError, ValueError):
    pass


class DegenerateGeometry(TransluceError, ValueError):
    pass


class SchemaVersionMismatch(TransluceError, ValueError):
    pass


class SchemaError(TransluceError, ValueError):
    pass


class MissingFile(TransluceError, FileNotFoundError):
    pass


class ChecksumMismatch(TransluceError, ValueError):
    pass


class EmptyCatalog(TransluceError, ValueError):
    pass


class DivergenceDetected(TransluceError, RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class StepTooSmall(TransluceError, ValueError):
    pass


class EmptyList(TransluceError, ValueError):
    pass


class SceneError(TransluceError, RuntimeError):
    """A tracer failure with the offending scene id attached."""

    def __init__(self, scene_id, cause):
        super().__init__(f"scene {scene_id}: {cause}")
        self.scene_id = scene_id
        self.cause = cause
