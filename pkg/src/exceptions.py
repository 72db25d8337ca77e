"""Error types raised by the flight stack, controllers and training pipeline"""

from typing import Optional


class TubeMavError(Exception):
    """Base class for all project errors"""


class NonFiniteState(TubeMavError, RuntimeError):
    """Integration produced NaN or Inf in the rigid-body state"""


class ActuatorSaturation(TubeMavError, RuntimeWarning):
    """A commanded actuator force left [f_min, f_max] and was clamped"""


class NotSkew(TubeMavError, ValueError):
    """vee() was given a matrix that is not skew-symmetric"""


class GimbalLock(TubeMavError, ValueError):
    """Euler angles are undefined at |pitch| = 90 deg"""


class NoConvergence(TubeMavError, RuntimeError):
    """An iterative solver hit its iteration cap"""


class NotStabilizable(TubeMavError, RuntimeError):
    """Riccati iteration stalled above tolerance or the closed loop is unstable"""


class Divergence(TubeMavError, RuntimeError):
    """Monte-Carlo tube rollout left the 1e6 ball"""


class EmptyTightenedSet(TubeMavError, ValueError):
    """Constraint tightening removed the whole box"""


class Infeasible(TubeMavError, RuntimeError):
    """Tracking QP has no feasible point"""

    def __init__(self, message: str, constraint: Optional[str] = None):
        super().__init__(message if constraint is None else f"{message} (constraint: {constraint})")
        self.constraint = constraint


class MaxIter(TubeMavError, RuntimeError):
    """QP solver or active-set polish ran out of iterations"""


class FormatVersionMismatch(TubeMavError, ValueError):
    """File header does not match the expected format version or layout"""


class DimensionMismatch(TubeMavError, ValueError):
    """Array shape does not match the network or model contract"""


class NonFiniteLoss(TubeMavError, RuntimeError):
    """Training loss became NaN or Inf"""
