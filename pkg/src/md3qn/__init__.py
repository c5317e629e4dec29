"""Joint distributional reinforcement learning over multiple reward sources.

Tabular particle learner, exact joint Bellman operators, Monte-Carlo
oracles and maze environments with source-specific rewards.
"""
__version__ = "0.1.0"

from .distribution import DiscreteJointDistribution, merge_atoms
from .kernels import KernelSpec, mmd2_eval_stat, mmd2_exact, mmd2_grad, mmd2_train_stat, preset
from .mdp import Policy, TabularMDP, Transition
from .maze import MazeEnv

__all__ = [
    "DiscreteJointDistribution",
    "KernelSpec",
    "MazeEnv",
    "Policy",
    "TabularMDP",
    "Transition",
    "merge_atoms",
    "mmd2_eval_stat",
    "mmd2_exact",
    "mmd2_grad",
    "mmd2_train_stat",
    "preset",
]
