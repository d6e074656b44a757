"""Workload-adaptive private answering of conjunctive counting queries.

Compile logical workloads into implicit Kronecker form, select low-error
measurement strategies under Laplace or Gaussian noise, run the private
measure/reconstruct pipeline, and report analytic expected errors with
singular-value lower bounds.
"""

from . import blocks, kron, marginals, mechanism, optimize, strategy, workload
from .blocks import (AllRange, Identity, Literal, Permuted, Prefix, Total,
                     WidthRange)
from .mechanism import (DomainConfig, NoiseSpec, analytic_rmse, calibrate,
                        empirical_error, measure, reconstruct,
                        vectorize_dataset)
from .optimize import (OptConfig, OptResult, opt0_gaussian, opt0_laplace,
                       opt_hdmm, opt_kron, opt_marginals, opt_plus)
from .strategy import (ExplicitStrategy, KronStrategy, MarginalStrategy,
                       UnionKronStrategy)
from .workload import (ImplicitWorkload, KronTerm, all_k_way_marginals,
                       impvec, materialize_explicit, svd_bound, unit_error)

__version__ = "0.1.0"
