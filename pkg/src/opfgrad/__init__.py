"""DC optimal power flow as an operator from loads to optimal generation."""
from .conic import (ConicProblem, PerturbationTriple, SelfDualPoint, assemble_Q, conic_jacobian,
                    embed_from_solution, opf_derivative_via_conic, solution_map_derivative, to_conic)
from .exceptions import (BudgetExceeded, CaseError, ConstructionFailed, DependentSets,
                         DimensionError, InfeasibleError, MultipleOptima, NotOptimal, OPFError,
                         RegionBoundary, SingularCombo, SingularM)
from .jacobian import (BindingCombo, JacobianMatrix, assemble_H, assemble_R, closed_form_jacobian,
                       enumerate_binding_combos, fd_jacobian, worst_case_sensitivity,
                       worst_case_table)
from .lp import (BindingSet, DispatchSolution, OPFModel, StandardLP, assemble_lp, detect_binding,
                 kkt_residuals, multiplier_count, solve_lp, solve_opf, uniqueness_probe)
from .network import (CapacityLimits, CaseFile, PowerNetwork, RawCase, bundled_case,
                      incidence_matrix, laplacian, load_case, save_case, split_composite_buses)
from .opf_operator import (OPFOperator, construct_parameters_for_binding, evaluate,
                           perturb_cost, perturb_limits, regularity_report)
from .sweep import RegionGrid, scan_limit_plane, scan_load_plane, trace_load_path

__version__ = "0.1.0"
