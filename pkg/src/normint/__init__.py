"""normint: anisotropic screen-space meshing and mesh-based normal integration.

Build a screen-space triangle mesh from a per-pixel normal map, decimate it
while aligning vertices and edges to ridges and furrows of the underlying
surface, then integrate the normals over the coarse mesh to recover a 3D
surface at a small fraction of pixel-based cost.
"""

from .camera import Camera, integration_constant, jacobian_from_normal, ray
from .errors import (
    BoundaryEdge,
    BoundaryRuleViolation,
    CoverageError,
    DegenerateAngle,
    DegenerateFace,
    DegenerateFit,
    DimensionMismatch,
    DomainError,
    EmptyMask,
    EmptyStar,
    FormatError,
    InversionRejected,
    LinkConditionViolation,
    NoConvergence,
    NonConvexQuad,
    NormintError,
    SingularSystem,
    SlantError,
)
from .evaluate import EvalReport, align_gauge, surface_error, sweep
from .integrate import (
    DepthMesh,
    IntegrationSystem,
    assemble,
    face_coefficients,
    integrate_mesh,
    solve,
    unproject,
)
from .mesh import ScreenMesh
from .normalmap import (
    GroundTruth,
    NormalMap,
    Plane,
    Ridge,
    Sinusoid,
    SphereCap,
    add_noise,
    decode,
    encode,
    synthesize,
)
from .pipeline import fullres_reference, run_scene
from .quadrics import (
    Quadric,
    ScreenQuadric,
    edge_metric,
    optimal_displacement,
    pixel_metric,
    rebuild_vertex_quadrics,
    screen_quadric,
    vertex_quadric,
)
from .raster import rasterize
from .remesh import (
    CollapseCandidate,
    RemeshConfig,
    align_edges,
    align_vertices,
    collapse_cost,
    decimate_pass,
)
from .remesh import run as remesh_run

__version__ = "0.1.0"
