"""Spectral toolkit for the frequency-truncated quintic NLS on the torus
with Gaussian random data: modified-energy decomposition, cancellation
checks, counting audits, and Monte Carlo measure-transport experiments."""

from .errors import BudgetExceededError, IntegrationBlowupError, ParameterError
from .params import (CutoffProfile, ModelParams, RADIAL_PROFILE, SCALAR_PROFILE,
                     smooth_cutoff)
from .lattice import (ModeSet, SpectralField, apply_sharp_truncation,
                      apply_smooth_truncation, dealias_size, from_grid,
                      get_modeset, hamiltonian, mass, modes_within,
                      quintic_nonlinearity, sobolev_norm_sq, to_grid,
                      triple_norm_sq, truncated_hamiltonian, weighted_field)
from .randomfield import (SamplerSpec, complex_std_gaussian, covariance_report,
                          resample_block, sample_ensemble, sample_mu_s)
from .resonance import (PairingClass, SecondGenTuple, SixTuple, classify,
                        classify_six_tuple,
                        counting_audit, counting_audit_family, enumerate_second_gen,
                        enumerate_six_tuples, lambda_factor, omega,
                        psi2s, psi_bound_audit, resonance_weight)
from .energetics import (EnergyReport, corrector_audit, corrector_psi,
                         corrector_psi_tilde, correction_R_sN, i_functional,
                         j_functional, modified_energy, part_R0, part_R1,
                         part_R2, part_S, q_total, remainder_R13, remainder_R23,
                         second_gen_breakdown)
from .dynamics import (FlowConfig, TrajectoryRecord, convergence_study, evolve,
                       evolve_field, finite_difference_q, linear_flow)
from .experiments import (CylinderSet, MCConfig, chaos_audit, measure_transport,
                          moment_growth, pointwise_law, weight_integrability)

__version__ = "0.1.0"
