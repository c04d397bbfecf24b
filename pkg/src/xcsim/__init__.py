"""
Deterministic multi-chain simulator: compact chains, state synchronization,
collateral-backed cross-chain authorization and per-chain routers.
"""

from .config import GenesisConfig, load_config
from .simulation import Simulation

__all__ = ["GenesisConfig", "Simulation", "load_config"]
