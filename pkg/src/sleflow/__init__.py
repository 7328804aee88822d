"""Loewner flows, SLE traces, free-field harmonic parts and the derivative tail exponent."""

from .driver import (DrivingPath, brownian_batch, deterministic_driver, dual_driver, reverse_driver,
                     sample_brownian_driver, sample_stream, tail_grid_dt, zero_driver)
from .flow import (CoarseGridWarning, FlowState, centered_inverse, compose_slit_maps, forward_flow,
                   reverse_flow, reverse_hull_trace, trace_point, trace_points)
from .gff import (HarmonicFieldSample, PinnedHarmonicLaw, circle_average_variance, cov_disc, cov_halfplane,
                  mobius_to_disc, sample_harmonic)
from .hull import HullSummary, distance_to_boundary, estimate_hcap_mc, hull_summary, is_simple
from .lattice import (LatticeDomain, LatticeField, SeparableGreen, harmonic_extension, restrict_and_extend,
                      sample_lattice_gff)
from .coupling import (CouplingParams, CouplingSample, MarkovHarmonic, coupling_constant_tail,
                       coupling_observable, run_coupling)
from .estimator import (ExponentParams, TailEstimate, exponent_params, fit_exponent, holder_objective,
                        tail_experiment)

__version__ = "0.1.0"
