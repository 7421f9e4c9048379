"""Exception hierarchy shared by all modules."""


class TTRegError(Exception):
    """Base class for every error raised by ttreg."""


class DimensionMismatch(TTRegError, ValueError):
    pass


class NotSPD(TTRegError, ValueError):
    """A Cholesky pivot was not safely positive."""


class SingularUpdate(TTRegError, ArithmeticError):
    pass


class NoConvergence(TTRegError, RuntimeError):
    pass


class GateOutOfRange(TTRegError, ValueError):
    pass


class DegenerateKey(TTRegError, ValueError):
    pass


class DegenerateGate(TTRegError, ValueError):
    pass


class DegenerateVector(TTRegError, ValueError):
    pass


class RankDeficient(TTRegError, ValueError):
    pass


class EmptyBuffer(TTRegError, ValueError):
    pass


class EmptySequence(TTRegError, ValueError):
    pass


class SolveFailure(TTRegError, ArithmeticError):
    """A batch or kernel solve could not be completed.

    ``index`` holds the offending prefix (1-based) when the failure comes
    from a per-prefix solver.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class TooManyVectors(TTRegError, ValueError):
    pass


class ConfigInvalid(TTRegError, ValueError):
    pass
