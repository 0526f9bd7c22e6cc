"""Finite-difference laboratory for 3D quasilinear wave equations with
null-condition nonlinearities."""

from .grid import FieldSnapshot, GridSpec, integrate, radial_angular_decompose, spatial_derivative
from .nullform import (NullFormTensor, canonical_tensor, is_null, load_tensor,
                       null_defect, symmetrize)
from .solver import (CauchyData, SimState, SolverConfig, linear_radial_oracle,
                     make_cauchy_data, quasilinear_rhs, run, run_collect, step_rk4)
from .vectorfields import (MultiIndex, SpacetimeJet, apply_generator, apply_multi,
                           enumerate_multiindices)
from .energetics import (EnergyReport, dissipation_G, energy_E1, energy_Es,
                         energy_identity_residual, ghost_q, hs_energy, modified_energy)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
