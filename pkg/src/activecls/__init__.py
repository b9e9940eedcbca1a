"""Active classification of multiple moving targets from a drone.

Modules: ``world`` (kinematics), ``sensor`` (synthetic camera classifier),
``belief`` (conflation), ``env`` (the POMDP), ``policy`` (set-attention
actor-critic), ``ppo`` (training), ``mpc`` (low-level tracking),
``baselines``, ``evaluation`` and ``cli``.
"""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
