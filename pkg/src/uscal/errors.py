"""Exception hierarchy.

Every error carries a short machine-readable ``code`` (the class name) and the
process exit status the CLI should use: 1 for user/input errors, 2 for
numerical or geometric failures.
"""


class UscalError(Exception):
    exit_code = 1

    @property
    def code(self) -> str:
        return type(self).__name__


class NumericalError(UscalError):
    exit_code = 2


# geometry / solver
class DegenerateInput(NumericalError):
    pass


class NumericalFailure(NumericalError):
    pass


# phantom / renderer
class UnknownLabel(UscalError):
    pass


class NoIntersection(NumericalError):
    pass


# detector
class NoCircleFound(NumericalError):
    pass


class AmbiguousPeak(NumericalError):
    pass


# planar pose
class BehindCamera(NumericalError):
    pass


class DegenerateTarget(NumericalError):
    pass


class DivergedRefinement(NumericalError):
    pass


# calibration
class TooFewInliers(NumericalError):
    pass


# file i/o
class ParseError(UscalError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MissingFile(UscalError):
    pass


class UnitError(ParseError):
    pass
