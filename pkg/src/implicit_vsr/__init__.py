"""Blind video super-resolution with implicit kernel dictionaries."""

from .dictionary import KernelDictionary, MultiScaleDictionary, build_dictionary, init_atoms, render_atom
from .filtering import CoefficientField, brute_force_filter, per_pixel_kernel, varying_filter
from .model import ImplicitVSR, ModelConfig, restore_clip

__version__ = "0.1.0"

__all__ = [
    "CoefficientField",
    "ImplicitVSR",
    "KernelDictionary",
    "ModelConfig",
    "MultiScaleDictionary",
    "brute_force_filter",
    "build_dictionary",
    "init_atoms",
    "per_pixel_kernel",
    "render_atom",
    "restore_clip",
    "varying_filter",
]
