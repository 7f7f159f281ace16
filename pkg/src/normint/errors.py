"""Exception hierarchy for the meshing / integration pipeline.

Mesh-editing errors (LinkConditionViolation, InversionRejected, ...) signal
that an operation was *refused* and the mesh is unchanged; they are expected
control flow during decimation and are swallowed by the batch drivers.
"""


class NormintError(Exception):
    """Base class for all package errors."""


class SlantError(NormintError):
    """Normal is (near-)perpendicular to the viewing ray."""


class FormatError(NormintError):
    """Input file could not be decoded."""


class DimensionMismatch(NormintError):
    """Image/mask dimensions disagree."""


class DomainError(NormintError):
    """Synthetic surface descriptor does not intersect the image."""


class EmptyMask(NormintError):
    """Foreground mask contains no pixels."""


class DegenerateFace(NormintError):
    """A face fell below the minimum area threshold."""


class MeshEditRejected(NormintError):
    """Base for refused local mesh edits; the mesh is left unchanged."""


class LinkConditionViolation(MeshEditRejected):
    """Collapse would create a non-manifold configuration."""


class InversionRejected(MeshEditRejected):
    """Edit would invert or critically thin an incident face."""


class BoundaryRuleViolation(MeshEditRejected):
    """Edit would alter the boundary polyline of the meshed domain."""


class NonConvexQuad(MeshEditRejected):
    """Edge flip refused: adjacent triangles do not form a convex quad."""


class BoundaryEdge(MeshEditRejected):
    """Operation requires an interior edge."""


class EmptyStar(NormintError):
    """Vertex has no incident faces."""


class SingularSystem(NormintError):
    """Linear system is numerically singular."""


class DegenerateAngle(NormintError):
    """Triangle angle too small for stable cotangent weights."""


class NoConvergence(NormintError):
    """Iterative solver exhausted its budget; best iterate attached."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class DegenerateFit(NormintError):
    """Gauge alignment impossible (e.g. all-zero predictions)."""


class CoverageError(NormintError):
    """Mesh covers too few of the masked pixels for evaluation."""
