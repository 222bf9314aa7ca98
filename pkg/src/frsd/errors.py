"""Exception types shared across the package."""


class FRSDError(Exception):
    """Base class for every error raised by this package."""


class NonConvergence(FRSDError):
    pass


class InfeasibleDensity(FRSDError):
    pass


class DimensionMismatch(FRSDError, ValueError):
    pass


class DimensionError(FRSDError, ValueError):
    pass


class ParseError(FRSDError, ValueError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class LabelError(ParseError):
    pass


class DegenerateEigenvalue(FRSDError):
    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = tuple(nodes)


class MissingWeights(FRSDError):
    pass


class UnknownAlgorithm(FRSDError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown algorithm"


class OracleDidNotConverge(FRSDError):
    def __init__(self, message, x_best, grad_norm):
        super().__init__(message)
        self.x_best = x_best
        self.grad_norm = grad_norm


class DegenerateStart(FRSDError):
    pass


class InsufficientData(FRSDError):
    pass


class DomainError(FRSDError, ValueError):
    pass


class NotDoublyStochastic(FRSDError, ValueError):
    pass


class SchemaError(FRSDError, ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class AllDiverged(FRSDError):
    pass


class Divergence(FRSDError):
    """Iterates left the finite range."""


class StepError(FRSDError):
    """A node step failed; carries the round and node where it happened."""

    def __init__(self, round_, node, cause):
        where = f"round {round_}" + ("" if node is None else f", node {node}")
        super().__init__(f"{where}: {cause}")
        self.round = round_
        self.node = node
        self.cause = cause
