"""Monte Carlo and exact tools for nearest-neighbor oriented bond percolation."""
__version__ = "0.1.0"

import os as _os
import sys as _sys

if "numba" not in _sys.modules and _os.environ.get("ORIPERC_THREADS"):
    # numba fixes its thread-pool size on import
    _os.environ.setdefault("NUMBA_NUM_THREADS", str(max(int(_os.environ["ORIPERC_THREADS"]),
                                                        _os.cpu_count() or 1)))

from .model import ModelParams, RngSpec, SpaceTimePoint, bernoulli_mask, children, site_valid  # noqa: E402
from .growth import AggregateStats, grow_cluster, run_ensemble, step_frontier  # noqa: E402
from .estimators import chi_xi_series, susceptibility, theta_series, two_point_profile, zeta_report  # noqa: E402
from .crossing import BoxSpec, crossings, estimate_crossing, find_pc, find_width, sample_box_config  # noqa: E402
from .oracle import exact_cluster_stats, exact_crossing, reversibility_check  # noqa: E402
from .analysis import (  # noqa: E402
    PowerLawRegressor,
    exponent_relation,
    fit_exponent,
    hyperscaling_report,
    lemma_bound_report,
    off_critical_fits,
)
