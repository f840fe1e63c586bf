"""gridfreq: a desk-scale workbench for distributed secondary frequency
control in power networks.

Simulates swing-equation network dynamics under a distributed averaging
controller, certifies controller gains through passivity-style matrix
conditions, computes cost-optimal dispatch, and monitors a Lyapunov
function along trajectories.
"""

from .certify import (Certificate, SymmetricMatrix, check_primary_lmi,
                      check_secondary_lmi, first_order_certificate,
                      first_order_min_damping, is_positive_definite,
                      primary_lmi_matrix, search_certificate,
                      second_order_certificate, second_order_min_damping,
                      secondary_lmi_matrix, sym_eigenvalues)
from .control import (ControllerGains, command_derivative, control_input,
                      default_kf, droop_input, optimal_kc)
from .dispatch import (DispatchProblem, check_optimality, marginal_costs,
                       solve_dispatch)
from .generation import (LtiGenerator, dc_gain, derivative, is_hurwitz,
                         make_first_order, make_second_order, output)
from .network import (Bus, BusKind, CommEdge, Line, PowerNetwork, line_power,
                      net_injection, validate)
from .sim import (Equilibrium, Scenario, SystemState, Trajectory,
                  closed_loop_derivative, compute_equilibrium,
                  dissipation_check, integrate, load_bus_frequency,
                  lyapunov_value)

__version__ = "0.1.0"

__all__ = [
    "Bus", "BusKind", "Certificate", "CommEdge", "ControllerGains",
    "DispatchProblem", "Equilibrium", "Line", "LtiGenerator", "PowerNetwork",
    "Scenario", "SymmetricMatrix", "SystemState", "Trajectory",
    "check_optimality", "check_primary_lmi", "check_secondary_lmi",
    "closed_loop_derivative", "command_derivative", "compute_equilibrium",
    "control_input", "dc_gain", "default_kf", "derivative",
    "dissipation_check", "droop_input", "first_order_certificate",
    "first_order_min_damping", "integrate", "is_hurwitz",
    "is_positive_definite", "line_power", "load_bus_frequency",
    "lyapunov_value", "make_first_order", "make_second_order",
    "marginal_costs", "net_injection", "optimal_kc", "output",
    "primary_lmi_matrix", "search_certificate", "second_order_certificate",
    "second_order_min_damping", "secondary_lmi_matrix", "solve_dispatch",
    "sym_eigenvalues", "validate",
]
