"""
Settings Loader Utility
Loads analysis defaults and synthetic-stream specs from YAML files
"""

import os
import yaml
from typing import Dict, Any

class SettingsLoader:
    def __init__(self, settings_dir: str = os.path.dirname(os.path.abspath(__file__))):
        self.settings_dir = settings_dir
        self._settings_cache: Dict[str, Dict[str, Any]] = {}
    
    def load_settings(self, filename: str) -> Dict[str, Any]:
        """Load a settings mapping from a YAML file in the settings directory"""
        if filename in self._settings_cache:
            return self._settings_cache[filename]
        
        filepath = os.path.join(self.settings_dir, filename)
        
        if not os.path.exists(filepath):
            raise FileNotFoundError(f"Settings file not found: {filepath}")
        
        settings = load_yaml_mapping(filepath)
        self._settings_cache[filename] = settings
        return settings
    
    def get_setting(self, filename: str, section: str, key: str) -> Any:
        """Get a specific setting from a section of a settings file"""
        settings = self.load_settings(filename)
        
        if section not in settings or key not in settings[section]:
            raise KeyError(f"Setting '{section}.{key}' not found in {filename}")
        
        return settings[section][key]

def load_yaml_mapping(filepath: str) -> Dict[str, Any]:
    """Read a YAML file whose top level must be a mapping"""
    with open(filepath, 'r', encoding='utf-8') as f:
        data = yaml.safe_load(f)
    
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{filepath}: expected a key-value mapping at top level")
    return data

# Global instance
settings_loader = SettingsLoader()
