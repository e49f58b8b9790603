"""Traffic-steering closed loop, KPI falsification attack and autoencoder defence."""

from .config import ConfigError, ScenarioConfig, from_dict, load_config, save_config

__version__ = "0.1.0"

__all__ = ["ConfigError", "ScenarioConfig", "from_dict", "load_config", "save_config",
           "__version__"]
