"""Structural diagnostics: energies, bounds, cancellations, CKN quantities, local energy."""
from .bounds import bm_bound_monitor, max_principle_bound, max_principle_monitor
from .cancellation import corotational_cancellation_residual, div2_cancellation_residual
from .ckn import CknReport, ckn_quantities, ckn_scaling_check, singularity_scan
from .energy_law import EnergyRecord, energy, energy_balance_residual
from .lei import Bump, LeiReport, local_energy_residual

__all__ = [
    "Bump", "CknReport", "EnergyRecord", "LeiReport", "bm_bound_monitor",
    "ckn_quantities", "ckn_scaling_check", "corotational_cancellation_residual",
    "div2_cancellation_residual", "energy", "energy_balance_residual",
    "local_energy_residual", "max_principle_bound", "max_principle_monitor",
    "singularity_scan",
]
