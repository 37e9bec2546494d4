"""
Configuration utilities for the chemotaxis laboratory

This module provides easy access to the model defaults declared in
settings and validates them on startup.
"""

from django.conf import settings
from typing import Any, Dict
import logging
import math

logger = logging.getLogger(__name__)


class ConfigManager:
    """
    Centralized access to the grouped model defaults
    """

    @staticmethod
    def get_signal_config(key: str, default: Any = None) -> Any:
        """Get extracellular signal default"""
        return getattr(settings, 'SIGNAL_CONFIG', {}).get(key, default)

    @staticmethod
    def get_pathway_config(key: str, default: Any = None) -> Any:
        """Get intracellular pathway default"""
        return getattr(settings, 'PATHWAY_CONFIG', {}).get(key, default)

    @staticmethod
    def get_grid_config(key: str, default: Any = None) -> Any:
        """Get phase-space grid default"""
        return getattr(settings, 'GRID_CONFIG', {}).get(key, default)

    @staticmethod
    def get_solver_config(key: str, default: Any = None) -> Any:
        """Get time-stepping default"""
        return getattr(settings, 'SOLVER_CONFIG', {}).get(key, default)

    @staticmethod
    def get_agents_config(key: str, default: Any = None) -> Any:
        """Get agent simulation default"""
        return getattr(settings, 'AGENTS_CONFIG', {}).get(key, default)

    @staticmethod
    def get_study_config(key: str, default: Any = None) -> Any:
        """Get convergence study default"""
        return getattr(settings, 'STUDY_CONFIG', {}).get(key, default)

    @staticmethod
    def get_all_config() -> Dict[str, Any]:
        """Get all model defaults as a dictionary"""
        return {
            'signal': getattr(settings, 'SIGNAL_CONFIG', {}),
            'pathway': getattr(settings, 'PATHWAY_CONFIG', {}),
            'grid': getattr(settings, 'GRID_CONFIG', {}),
            'solver': getattr(settings, 'SOLVER_CONFIG', {}),
            'agents': getattr(settings, 'AGENTS_CONFIG', {}),
            'study': getattr(settings, 'STUDY_CONFIG', {}),
        }

    @staticmethod
    def validate_config() -> Dict[str, Any]:
        """
        Validate the settings-level defaults and return validation results
        """
        validation_results = {
            'valid': True,
            'errors': [],
            'warnings': []
        }

        k_i = ConfigManager.get_signal_config('K_I_UM', 18.2)
        k_a = ConfigManager.get_signal_config('K_A_UM', 3000.0)
        if not 0 < k_i < k_a:
            validation_results['valid'] = False
            validation_results['errors'].append(
                f"Dissociation constants must satisfy 0 < K_I ({k_i}) < K_A ({k_a})"
            )

        s0 = ConfigManager.get_signal_config('S0_UM', 500.0)
        sa = ConfigManager.get_signal_config('SA_UM', 100.0)
        if not s0 > sa >= 0:
            validation_results['valid'] = False
            validation_results['errors'].append(
                f"Signal amplitude must satisfy S0 ({s0}) > SA ({sa}) >= 0"
            )

        a0 = ConfigManager.get_pathway_config('A0', 0.5)
        if not 0 < a0 < 1:
            validation_results['valid'] = False
            validation_results['errors'].append(
                f"Preferred activity a0 ({a0}) must lie in (0, 1)"
            )

        epsilon = ConfigManager.get_pathway_config('EPSILON', 0.1)
        if not 0 < epsilon <= 1:
            validation_results['valid'] = False
            validation_results['errors'].append(
                f"Scale separation epsilon ({epsilon}) must lie in (0, 1]"
            )

        hill = ConfigManager.get_pathway_config('H', 10.0)
        tau = ConfigManager.get_pathway_config('TAU_S', 0.8)
        z0 = ConfigManager.get_pathway_config('Z0_PER_S', 0.14)
        lambda_plus = z0 + a0 ** (-hill) / tau if 0 < a0 < 1 and tau > 0 else math.inf
        if lambda_plus > 1000:
            validation_results['warnings'].append(
                f"Maximal tumbling rate {lambda_plus:.1f}/s forces agent steps below "
                f"{0.2 / lambda_plus:.2e} s. Lower H for exploratory agent runs."
            )

        ny = ConfigManager.get_grid_config('NY', 128)
        if ny < 16:
            validation_results['valid'] = False
            validation_results['errors'].append(
                f"Blow-up grid needs at least 16 cells (NY={ny})"
            )

        return validation_results


def validate_configuration_on_startup():
    """Validate configuration when the project apps are loaded"""
    try:
        validation_results = ConfigManager.validate_config()

        if not validation_results['valid']:
            logger.error("Configuration validation failed:")
            for error in validation_results['errors']:
                logger.error(f"  - {error}")

        if validation_results['warnings']:
            logger.debug("Configuration warnings:")
            for warning in validation_results['warnings']:
                logger.debug(f"  - {warning}")

    except Exception as e:
        logger.error(f"Error during configuration validation: {e}")
