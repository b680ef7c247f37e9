from .attacks import AttackConfig, AttackResult, PrivacyRiskReport, privacy_attacks
from .fidelity import FidelityReport, fidelity, fidelity_column, fidelity_row, js_divergence, theils_u
from .report import EvalReport
from .utility import UtilityError, UtilityReport, utility_phi

__all__ = [
    "AttackConfig", "AttackResult", "PrivacyRiskReport", "privacy_attacks",
    "FidelityReport", "fidelity", "fidelity_column", "fidelity_row", "js_divergence", "theils_u",
    "EvalReport", "UtilityError", "UtilityReport", "utility_phi",
]
