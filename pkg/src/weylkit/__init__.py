"""Weyl-Titchmarsh and Donoghue m-functions for matrix Schrodinger operators."""
from .errors import (BranchPointError, ConvergenceError, DomainError, InvalidInputError,
                     InvariantError, ReducibleError, ResolutionError, SingularityError,
                     TransformSingularityError, WeylkitError)
from .herglotz import (HerglotzEvaluator, HerglotzRep, IntervalMeasure, OperatorMeasure, atom_at,
                       check_herglotz, eval_rep, interval_measure, stieltjes_invert)
from .ode import GridPotential, fundamental_system, wronskian_residuals
from .halfline import (WeylResult, deficiency_frame, donoghue_m_halfline, greens_halfline,
                       left_halfline_m, lft_transform, spectral_measure_halfline, weyl_m)
from .fullline import (BlockMatrix2, FullLineProblem, block_M, donoghue_block_M,
                       donoghue_block_oracle, fullline_green, minimal_operator_frames,
                       omega_measure, t_e_blocks)
from .donoghue import (SubspacedOperator, diagonalize, donoghue_M, donoghue_measure,
                       lower_bound_check, residual_identity_check, simplicity_check)
from .oracle import discretize, discretize_line, ml_poles_vs_eigs, parseval_check, resolvent_apply

__version__ = "0.1.0"
