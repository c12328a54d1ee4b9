"""Simulated safe insertion of multi-pin components.

Modules: ``geometry`` (SE(3) poses), ``kinematics`` (DH arm, FK, Jacobian, IK),
``occt`` (constrained LQR tracker), ``sia`` (insertion state machine), ``pim``
(goal inference from failed attempts), ``cmaes`` (evolution strategy),
``simenv`` (kinematic contact simulator), ``slm`` (parameter learning) and
``cli`` (command-line entry point).
"""
from ._core import BACKEND
from .geometry import Pose
from .kinematics import ArmModel, reference_arm
from .occt import Infeasible, OcctParams, Tracker
from .pim import BeliefCollapse, ComponentSpec, PimParams
from .sia import SafeInsertionAgent, SiaParams, SiaState
from .simenv import EnvConfig, SimEnv, sample_task

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ArmModel",
    "BeliefCollapse",
    "ComponentSpec",
    "EnvConfig",
    "Infeasible",
    "OcctParams",
    "PimParams",
    "Pose",
    "SafeInsertionAgent",
    "SiaParams",
    "SiaState",
    "SimEnv",
    "Tracker",
    "reference_arm",
    "sample_task",
]
