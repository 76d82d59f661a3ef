"""Boundary control of stop-and-go traffic on the ARZ model.

Exact backstepping, PI, and two DeepONet operator approximations (gain
kernels and direct control law) behind one controller interface.
"""

from .arz_sim import SimConfig, TrafficState, Trajectory, initial_condition, simulate, step
from .control import (
    BacksteppingController,
    LyapunovParams,
    NOKernelController,
    NOLawController,
    PIController,
    PIGains,
    backstepping_control,
    lyapunov_vk,
    target_transform,
)
from .kernel_solver import KernelPair, eval_kernel, kernel_residual, solve_kernels
from .traffic_model import (
    CharacteristicParams,
    Equilibrium,
    ModelParams,
    RiemannState,
    characteristics,
    equilibrium,
    from_riemann,
    fundamental_diagram,
    linearization,
    to_riemann,
)

__version__ = "0.1.0"
