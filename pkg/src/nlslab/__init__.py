"""nlslab — spectral laboratory for the final-state problem of the
critical-power nonlinear Schrodinger equation  i u_t + Lap u = F(u).

The package is organised around six small modules:

* :mod:`nlslab.nonlinearity` — periodic symbols g(theta), Fourier
  coefficients g_n (quadrature and closed forms), resonant splitting.
* :mod:`nlslab.operators` — grids, spectral fields, the unitary calculus
  U(t), M(t), D(sigma), E(t), the regularizing multipliers K_psi and the
  algebraic weights A_n, B, C_n.
* :mod:`nlslab.profiles` — asymptotic profiles u_p, w-hat, phi_n, the
  second profile calV (closed and operator forms), v_p, external terms.
* :mod:`nlslab.solver` — split-step integrator, backward final-state
  runs, truncated-horizon Picard iteration.
* :mod:`nlslab.analysis` — norms and decay-rate fitting.
* :mod:`nlslab.cli` — reproducible experiment driver.
"""

from .operators import (
    Grid,
    SpectralField,
    CutoffKernel,
    make_grid,
    field_from_function,
    free_propagate,
    multiply_M,
    multiply_E,
    dilate_D,
    dilate_D_inverse,
    fourier_as_field,
    inverse_fourier_as_field,
    mdfm_residual,
    factorize_FUD,
    factorize_FUD_lhs,
    make_psi,
    regularize_K,
    probe_K_flatness,
    multiply_An,
    b_weight,
    resolvent_Cn,
    make_testers,
    set_workers,
)
from .analysis import (
    DecayFit,
    fit_decay,
    rate_verdict,
    norm_lebesgue,
    norm_sobolev,
    norm_sobolev_dot,
    norm_spacetime,
)
from .nonlinearity import (
    PeriodicSymbol,
    FourierSymbol,
    HomogeneousNonlinearity,
    symbol_from_nonlinearity,
    coeff_quadrature,
    coeff_quadrature_with_error,
    coeff_cos_power,
    coeff_sin_power,
    build_symbol,
    resonant_split,
    eval_series,
    summability,
    coeff_decay_fit,
    lip_norm_estimate,
)
from ._radial import RadialGrid, RadialField
from .profiles import (
    FinalData,
    ProfileBundle,
    gaussian_final_data,
    make_w_hat,
    make_up,
    make_phi_n,
    make_calV_closed_form,
    make_calV_operator_form,
    make_vp,
    make_mtt_profile,
    make_external_terms,
)
from .solver import (
    SolverConfig,
    Trajectory,
    step,
    integrate_final_state,
    picard_iterate,
    residual_norm,
    save_trajectory,
    load_trajectory,
)
from .cli import ExperimentConfig, load_config

__version__ = "0.1.0"
