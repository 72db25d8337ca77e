"""TubeMAV - Robust tube MPC and policy distillation for a flapping-wing micro aerial vehicle"""

__version__ = "0.1.0"
