"""Intent-guided grasp learning: segmentation, intent estimation, PPO with intent rewards."""

__version__ = "0.1.0"
