"""Multimodal trajectory prediction toolkit: scenes, rasters, trajectory sets, baselines,
metrics, a small reverse-mode autodiff engine, prediction heads and an ablation harness."""

__version__ = "0.1.0"
