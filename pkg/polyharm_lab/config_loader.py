import os
from copy import deepcopy
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Nested dicts merge key by key; any other value in ``override`` replaces the base."""
    result = deepcopy(base)
    for key, value in override.items():
        existing = result.get(key)
        if isinstance(existing, dict) and isinstance(value, dict):
            result[key] = deep_merge(existing, value)
        else:
            result[key] = deepcopy(value)
    return result


class ConfigLoader:
    def __init__(self, cwd: Optional[Path] = None):
        """
        Initializes the config loader by:
          - Loading environment from `.env`
          - Merging YAML configs from the package `config/` folder, then the workspace one
        """
        self.cwd = cwd or Path.cwd()
        self._load_env()
        self.config = self._load_yaml_configs()

    def _load_env(self):
        """
        Load environment variables from `.env` in the current working directory
        or up to two parents up.
        """
        possible_locations = [
            self.cwd / ".env",
            self.cwd.parent / ".env",
            self.cwd.parent.parent / ".env",
        ]
        for location in possible_locations:
            if location.exists():
                load_dotenv(location, override=True)
                break

    def _load_yaml_configs(self):
        package_config_dir = Path(__file__).parent / "config"
        search_dirs = [package_config_dir]
        for candidate in [
            self.cwd / "config",
            self.cwd.parent / "config",
            self.cwd.parent.parent / "config",
        ]:
            if candidate not in search_dirs:
                search_dirs.append(candidate)

        merged_config: Dict[str, Any] = {}
        for directory in search_dirs:
            if not directory.exists():
                continue
            for yaml_file in sorted(directory.glob("*.yaml")):
                with open(yaml_file, "r", encoding="utf-8") as f:
                    data = yaml.safe_load(f) or {}
                if isinstance(data, dict):
                    merged_config = deep_merge(merged_config, data)
        return merged_config

    def get(self, key, default=None):
        """
        Retrieve a top-level config item; an environment variable of the same name wins.
        """
        return os.environ.get(key, self.config.get(key, default))

    def section(self, name: str) -> Dict[str, Any]:
        value = self.config.get(name) or {}
        return deepcopy(value) if isinstance(value, dict) else {}
