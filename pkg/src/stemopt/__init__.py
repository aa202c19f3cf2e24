"""stemopt: optimal sunlight-harvesting stem shapes and canopy equilibria.

Solvers for two single-stem optimization models (fixed length/thickness and
free length/leaf density), their competitive equilibria under self-generated
shade, a planar light-field variant, and brute-force oracles validating each
solver independently.
"""

from .params import ModelParams
from .lightfield import (
    LightProfile,
    RegularityReport,
    check_class_F,
    check_uniqueness_condition,
    load_tabulated_csv,
)
from .model1 import (
    NonUniqueness,
    OracleResult,
    StemShape1,
    find_nonuniqueness_epsilon,
    fold_angles,
    g_profile,
    oracle_op1,
    payoff_op1,
    phi_inverse,
    rearrange_nonincreasing,
    solve_op1,
)
from .equilibrium1 import Equilibrium1Result, solve_bcp, solve_equilibrium1, verify_fixed_point
from .model2 import (
    G2,
    Op2Config,
    StemState2,
    feedback_TU,
    oracle_op2,
    seed_terminal_layer,
    shoot_op2,
    z_first_integral,
)
from .equilibrium2 import (
    Equilibrium2Result,
    shade_map,
    solve_equilibrium_direct,
    solve_equilibrium_fixed_point,
    verify_equilibrium,
)
from .spatial import (
    LightField2D,
    StemFamily,
    halfline_relaxation,
    light_from_family,
    solve_op3_single,
)

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "LightProfile", "RegularityReport", "check_class_F",
    "check_uniqueness_condition", "load_tabulated_csv",
    "StemShape1", "NonUniqueness", "OracleResult", "g_profile", "phi_inverse",
    "solve_op1", "payoff_op1", "fold_angles", "rearrange_nonincreasing",
    "oracle_op1", "find_nonuniqueness_epsilon",
    "Equilibrium1Result", "solve_bcp", "solve_equilibrium1", "verify_fixed_point",
    "G2", "Op2Config", "StemState2", "feedback_TU", "z_first_integral",
    "shoot_op2", "seed_terminal_layer", "oracle_op2",
    "Equilibrium2Result", "shade_map", "solve_equilibrium_fixed_point",
    "solve_equilibrium_direct", "verify_equilibrium",
    "LightField2D", "StemFamily", "solve_op3_single", "light_from_family",
    "halfline_relaxation",
    "__version__",
]
