"""Multi-agent coverage control via optimal transport: kernel-smoothed
coverage objectives, capacity-constrained partitions, transport solvers, and
proximal descent schemes, with a reproducible experiment harness."""

from .descent import (DescentConfig, DescentTrace, QuadraticToy,
                      agent_limit_step, agent_prox_step, gradient_flow,
                      lloyd_prox_step, macro_prox_step, run)
from .domain import (Domain, GridDensity, ParticleConfig, coarsen,
                     grid_from_csv, grid_to_csv, histogram, make_grid,
                     particles_from_csv, particles_to_csv, sample,
                     total_variation)
from .errors import (AllZeroDensity, CapacityUnreachable, ConfigError,
                     InnerNotConverged, MaxIterExceeded, MissingArtifacts,
                     NegativeDensity, NotConverged, ParticleTooCloseToBoundary,
                     ProxCoverError, TooLarge)
from .kernels import (KernelSpec, ShrunkenDomain, is_separated, kernel_eval,
                      kernel_cell_masses, kernel_normalizer, min_separation,
                      mixture_density)
from .objectives import (DistortionTransportReport, ObjectiveSpec,
                         balanced_grad, balanced_value, distortion_value,
                         distortion_transport_report, estimate_smoothness,
                         kernel_grad, kernel_value)
from .partition import (CapacityWeights, Partition, centroids,
                        solve_capacity_weights, voronoi, weighted_voronoi)
from .transport import (DiscreteMeasure, TransportSolution,
                        cyclically_monotone, ot_lp, ot_sinkhorn,
                        semidiscrete_cost, w2_between_grids,
                        w2_kernel_mixtures)

__version__ = "0.1.0"
