"""Meta-offline multi-agent Q-learning for UAV trajectory and scheduling under AoI/power objectives."""

__version__ = "0.1.0"
