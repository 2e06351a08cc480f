"""Exception hierarchy.

Every domain error carries a stable ``code`` (the class name) and a
``details`` dict so the CLI can emit machine-parseable error JSON.
"""


class ERError(Exception):
    """Base class for all domain errors raised by errepo."""

    def __init__(self, message="", **details):
        super().__init__(message or self.__class__.__name__)
        self.details = details

    @property
    def code(self):
        return type(self).__name__

    def to_dict(self):
        out = {"error": self.code, "message": str(self)}
        out.update({k: _jsonable(v) for k, v in self.details.items()})
        return out


def _jsonable(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)


class MissingFile(ERError, FileNotFoundError):
    pass


class ArityMismatch(ERError, ValueError):
    pass


class ValueOutOfRange(ERError, ValueError):
    pass


class InvalidValue(ERError, ValueError):
    pass


class DuplicatePair(ERError, ValueError):
    pass


class MalformedInput(ERError, ValueError):
    pass


class TooFewProblems(ERError, ValueError):
    pass


class EmptyDistribution(ERError, ValueError):
    pass


class InvalidGrid(ERError, ValueError):
    pass


class NegativeDistance(ERError, ValueError):
    pass


class DuplicateProblem(ERError, ValueError):
    pass


class UnknownProblem(ERError, KeyError):
    pass


class EmptyTrainingSet(ERError, ValueError):
    pass


class SingleClassTrainingSet(ERError, ValueError):
    pass


class InfeasibleBudget(ERError, ValueError):
    pass


class VoteOutOfRange(ERError, ValueError):
    pass


class OracleMiss(ERError, KeyError):
    pass


class BudgetExhaustedAtSeed(ERError, ValueError):
    pass


class EmptyRepository(ERError, ValueError):
    pass


class CorruptManifest(ERError, ValueError):
    pass


class VersionMismatch(ERError, ValueError):
    pass


class InvalidSpec(ERError, ValueError):
    pass


class InvalidConfig(ERError, ValueError):
    pass
