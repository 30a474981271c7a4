"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` used by the command line driver:
1 for invalid input and 2 for numerical failures.
"""


class CrInfSupError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(CrInfSupError):
    """Input data violates a precondition."""

    exit_code = 1


class NumericalError(CrInfSupError):
    """A numerical construction failed or lost its guarantees."""

    exit_code = 2


# orthopoly
class WeightedSeminormUndefined(ValidationError):
    """A weighted seminorm was requested for a polynomial not vanishing at the weight's pole."""


class VertexMismatch(ValidationError):
    """Edge traces disagree at a shared triangle vertex."""


# mesh
class MeshParseError(ValidationError):
    """Malformed mesh text; the message names the offending line."""


class NonConforming(ValidationError):
    """Two triangles overlap or a vertex hangs on another triangle's edge."""


class DegenerateTriangle(ValidationError):
    """A triangle has (nearly) zero area."""


class BadOrientation(ValidationError):
    """A triangle is listed clockwise."""


class EtaTooLarge(ValidationError):
    """The criticality threshold exceeds the admissible bound for the mesh."""


class UnclassifiableCritical(NumericalError):
    """A nearly critical vertex fits none of the four patch categories."""


class ApexCritical(NumericalError):
    """The far endpoint of a chosen fan edge is itself nearly critical."""


class NoInnerVertex(ValidationError):
    """The mesh has no interior vertex, which odd-degree constructions require."""


class NotExhaustive(ValidationError):
    """The triangles are not connected through edges."""


class InvalidAngles(ValidationError):
    """Angles for a generated patch are non-positive or exceed a full turn."""


# femspace
class ParityMismatch(ValidationError):
    """A construction was requested for the wrong parity of the degree."""


class PointOutsidePatch(ValidationError):
    """Evaluation point lies outside the support of the requested function."""


class PointOutsideTriangle(PointOutsidePatch):
    """Evaluation point lies outside the requested triangle."""


# assembly / infsup
class SingularOperator(NumericalError):
    """An operator that must be positive definite is singular."""


class EmptyVelocitySpace(ValidationError):
    """The discrete velocity space (or effective pressure space) is trivial."""


class NotSPD(NumericalError):
    """A matrix expected to be symmetric positive definite is not."""


class InfeasibleConstraint(NumericalError):
    """The divergence constraint cannot be met because the inf-sup constant vanishes."""


# rightinverse
class FanSingular(NumericalError):
    """The tridiagonal fan system is numerically singular."""


class UnderdeterminedMeans(NumericalError):
    """Interior-edge bubbles cannot reproduce the requested triangle means."""


class ConstraintInfeasible(NumericalError):
    """A constrained minimal-energy problem has no solution."""


class PreconditionViolated(ValidationError):
    """Geometric preconditions of a construction step do not hold."""


class SingularInteriorSolve(NumericalError):
    """The interior fill of a polynomial extension failed."""
