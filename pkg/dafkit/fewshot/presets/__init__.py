"""玩具数据集预设"""
from .loader import PresetLoader, get_preset_loader, get_toy_spec

__all__ = ["PresetLoader", "get_preset_loader", "get_toy_spec"]
