"""Reduced-rank function spaces for continuous connectivity samples.

Pipeline: simulate or ingest endpoint pairs, estimate per-subject
connectivity surfaces by heat-kernel KDE, learn a sparse rank-K symmetric
separable basis by greedy alternating optimization, embed subjects as
score vectors, and run group-difference inference plus parcel-level
localization of significant components.
"""

from .errors import (CCEmbedError, ConfigurationError, DataError,
                     GeometryError, ModelError, NumericalError, ParseError)
from .geometry import (Grid, Hemisphere, SphericalTriangulation, SurfacePoint,
                       build_delaunay, build_grid, build_icosphere,
                       fibonacci_mesh, fibonacci_sphere, geodesic_distance,
                       load_mesh, save_mesh)
from .inference import (GroupLabels, TestResult, bh_fdr, holm_correction,
                        mmd_test, pairwise_distances, per_dimension_tests)
from .kde import (IntensityField, center_sample, heat_coefficients,
                  heat_kernel, heat_kernel_matrix, kde_estimate)
from .kernels import BACKEND
from .pointprocess import (LatentModel, PointPattern, random_latent_model,
                           read_endpoints, sample_intensity, sample_pattern,
                           write_endpoints)
from .reduced_rank import (FitDiagnostics, ReducedRankBasis, ResidualTensor,
                           ScoreMatrix, SvdFactors, c_update, compress,
                           deflation_projector, embed, fit, load_fit,
                           reconstruct, residual_update, s_update, save_fit,
                           variance_explained, variance_explained_trace)
from .splines import (BasisSystem, build_basis_system, evaluate_basis,
                      evaluation_matrix, gram_matrix, roughness_matrix,
                      spline_values)
from .subnetwork import (Parcellation, coarsen, make_parcellation,
                         octant_parcellation, support_set, top_edges)

__version__ = "0.1.0"
