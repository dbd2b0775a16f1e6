"""Exception hierarchy shared by every module."""


class WaveDampError(Exception):
    """Base class for all package errors."""


class NoBranchFound(WaveDampError):
    def __init__(self, u):
        super().__init__(f"no branch of S bracketed at u={u!r}")
        self.u = u


class BranchOverflow(WaveDampError):
    def __init__(self, u, count, bound):
        super().__init__(f"{count} branches at u={u!r} exceed bound {bound}")
        self.u, self.count, self.bound = u, count, bound


class EmptyValueSet(WaveDampError):
    def __init__(self, x):
        super().__init__(f"S({x!r}) is empty")
        self.x = x


class InversionFailure(WaveDampError):
    pass


class WindowOutOfRange(WaveDampError):
    pass


class AmbiguousRegime(WaveDampError):
    pass


class RegimeMismatch(WaveDampError):
    pass


class QuadratureFailure(WaveDampError):
    pass


class BracketFailure(WaveDampError):
    pass


class FitFailure(WaveDampError):
    pass


class ConstructionFailure(WaveDampError):
    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class HypothesisMismatch(WaveDampError):
    pass


class MonotonicityViolation(WaveDampError):
    pass


class TruncationTooCoarse(WaveDampError):
    pass


class NotStrictDamping(WaveDampError):
    pass


class ConditionNotCertified(WaveDampError):
    pass


class ConfigError(WaveDampError):
    pass
