"""Exception hierarchy shared by every marketlift module."""


class MarketliftError(Exception):
    """Base class for all errors raised by marketlift."""


# instance parsing and preprocessing
class MissingField(MarketliftError):
    pass


class InvariantViolation(MarketliftError):
    def __init__(self, field, rule):
        self.field = field
        self.rule = rule
        super().__init__(f"{field}: {rule}")


class MultipleSlackBuses(MarketliftError):
    pass


class NonPositiveMultiplier(MarketliftError):
    pass


class DisconnectedNetwork(MarketliftError):
    pass


class SingularReducedMatrix(MarketliftError):
    pass


# solver interface
class BackendFailure(MarketliftError):
    pass


class TimeLimit(MarketliftError):
    pass


class NumericalTrouble(MarketliftError):
    pass


# lifting
class UnboundedContinuousVariable(MarketliftError):
    pass


class EmptyBlock(MarketliftError):
    pass


class MissingDuals(MarketliftError):
    pass


# market models
class TriangleBlowup(MarketliftError):
    pass


class MissingMilpSolution(MarketliftError):
    pass


class NonPositiveExact(MarketliftError):
    pass


class MissingAcFields(MarketliftError):
    pass


class InfeasibleDispatch(MarketliftError):
    def __init__(self, row, detail=""):
        self.row = row
        super().__init__(f"dispatch violates {row}" + (f": {detail}" if detail else ""))


# pricing / settlement
class ClosedFormMismatch(MarketliftError):
    pass


class IncompletePrices(MarketliftError):
    pass


# bench
class EmptyArchive(MarketliftError):
    pass


class ConfigError(MarketliftError):
    pass
