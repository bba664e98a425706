"""Free Schrödinger dynamics, spectra and resolvents on metric graphs with infinite ends."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .graph_model import (GraphFunction, MetricGraph, build_example, inner_product, load_graph,  # noqa: F401
                          norm_L1, norm_L2, norm_Linf, save_graph, validate_graph)
from .exp_poly import ExpPolynomial, LaurentPolynomial, ep_eval, ep_min_scan, ep_to_laurent  # noqa: F401
from .scattering import assemble_system, det_symbolic, solve_coefficients  # noqa: F401
from .spectrum import (SpectralDecomposition, counterexample_sequence, dc_lower_bound,  # noqa: F401
                       factor_determinant, point_spectrum)
from .resolvent import (KernelQuery, check_regularity_at_eigenvalue, gamma_double_tadpole,  # noqa: F401
                        limiting_kernel, resolvent_kernel)
from .evolution import (PropagatorConfig, decompose, evolve_double_tadpole_tail, evolve_oracle,  # noqa: F401
                        evolve_spectral, project, run_oracle, run_spectral)
from .diagnostics import continuity_check, decay_scan, flow_decay_scan, probability_flow  # noqa: F401
from .profiles import parse_profile  # noqa: F401
