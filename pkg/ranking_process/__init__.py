"""
Stochastic ranking process: hydrodynamic limits, search-cost formulas and
exact finite-N simulation of the continuous-time move-to-front rule.
"""

__version__ = "0.1.0"

from .hydro import InitialProfile, LimitModel
from .rates import DiscreteLaw, EmpiricalLaw, ParetoLaw
from .searchcost import CostModel
from .workflow import ExperimentWorkflow
from .report_generator import ReportGenerator

__all__ = [
    'InitialProfile',
    'LimitModel',
    'DiscreteLaw',
    'EmpiricalLaw',
    'ParetoLaw',
    'CostModel',
    'ExperimentWorkflow',
    'ReportGenerator',
]
