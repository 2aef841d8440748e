"""Explainability workbench for vision-language IHC slide analysis."""

__version__ = "0.1.0"
