"""Exception hierarchy shared by every module."""


class UEGRError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(UEGRError, ValueError):
    pass


class NonFiniteResult(UEGRError, FloatingPointError):
    pass


class LossNotScalar(UEGRError, ValueError):
    pass


class TraceAlreadyConsumed(UEGRError, RuntimeError):
    pass


class EmbeddingLeafMissing(UEGRError, KeyError):
    pass


class TokenOutOfVocab(UEGRError, IndexError):
    pass


class RateOutOfRange(UEGRError, ValueError):
    pass


class DegenerateGradient(UEGRError, ValueError):
    pass


class NotOneHot(UEGRError, ValueError):
    pass


class EmptyDistributionList(UEGRError, ValueError):
    pass


class NeedAtLeastTwoPasses(UEGRError, ValueError):
    pass


class NegativeWeight(UEGRError, ValueError):
    pass


class EmptyBatch(UEGRError, ValueError):
    pass


class NonPositiveBeta(UEGRError, ValueError):
    pass


class InsufficientTrials(UEGRError, ValueError):
    pass


class StepOutOfRange(UEGRError, ValueError):
    pass


class NonFiniteLoss(UEGRError, FloatingPointError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MalformedLine(UEGRError, ValueError):
    def __init__(self, line_no, detail=""):
        super().__init__(f"malformed line {line_no}: {detail}" if detail else f"malformed line {line_no}")
        self.line_no = line_no


class EmptyFile(UEGRError, ValueError):
    pass


class InvalidSpec(UEGRError, ValueError):
    pass


class EmptyDataset(UEGRError, ValueError):
    pass


class DegenerateActivations(UEGRError, ValueError):
    pass


class ConfigInvalid(UEGRError, ValueError):
    def __init__(self, key, detail=""):
        super().__init__(f"invalid config key {key!r}: {detail}" if detail else f"invalid config key {key!r}")
        self.key = key


class VerificationFailed(UEGRError, AssertionError):
    def __init__(self, failed):
        super().__init__("failed properties: " + ", ".join(failed))
        self.failed = list(failed)


class IoError(UEGRError, OSError):
    def __init__(self, path, detail):
        super().__init__(f"{path}: {detail}")
        self.path = path
