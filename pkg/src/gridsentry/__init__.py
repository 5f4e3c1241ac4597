"""Dynamic PMU placement driven by the electrical structure of a power grid."""

from .case_model import CaseData, bundled_case, internal_index, load_case, read_case
from .state import StateVector

__version__ = "0.1.0"

__all__ = ["CaseData", "StateVector", "bundled_case", "internal_index", "load_case", "read_case"]
