"""核心模块"""
from .config import settings, get_settings
from .rng import RngStream

__all__ = ["settings", "get_settings", "RngStream"]
