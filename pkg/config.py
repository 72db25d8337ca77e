"""
Configuration and setup utilities for TubeMAV
"""

import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import dotenv_values


class Config:
    """Controller, simulation and training configuration"""

    # Parameter files
    PARAMS_FILE = str(Path(__file__).parent / 'params' / 'softfly.env')
    OUTPUT_FOLDER = str(Path(__file__).parent / 'runs')

    # Timing
    TS = 5e-4  # inner loop / simulation step [s]
    TC = 0.02  # outer loop period [s]
    N = 50  # prediction horizon

    # Hover model and constraint boxes
    FEXT_FRAC = 0.15  # disturbance bound as a fraction of the weight
    MAX_TILT_DEG = 25.0
    DFCMD_FRAC = 0.8
    MAX_RATE_CMD = 10.0  # [rad/s]
    MAX_VEL = 2.0  # [m/s]
    MAX_POS = 1.0  # [m]
    FIT_ATTITUDE_LOOP = True
    ATT_K_PHI = 1.0
    ATT_K_THETA = 1.0
    ATT_TAU_PHI = 0.04
    ATT_TAU_THETA = 0.04
    EULER_RATE_MATRIX = 'printed'

    # Cost weights
    Q_POS = 100.0
    Q_VEL = 10.0
    Q_ATT = 1.0
    Q_CMD = 1.0
    R_RATE = 1.0
    R_THRUST = 0.1

    # Monte-Carlo tube
    TUBE_ROLLOUTS = 1000
    TUBE_HORIZON = 500
    TUBE_SEED = 42
    TUBE_SAMPLING = 'uniform'

    # Imitation learning
    DEMO_STEPS = 350
    N_EXTRA = 200
    AUGMENT_SEED = 0
    EPOCHS = 15
    LR = 0.001
    BATCH_SIZE = 256
    TRAIN_SEED = 0
    HOLDOUT_FRACTION = 0.1

    # Evaluation
    T0 = 0.5  # metric start [s]
    N_SEEDS = 3
    GYRO_NOISE_STD = 0.0

    # Flask settings
    DEBUG = False
    TESTING = False
    MAX_CONTENT_LENGTH = 64 * 1024

    # Application metadata
    APP_NAME = "TubeMAV"
    APP_VERSION = "0.1.0"

    @classmethod
    def get_output_folder(cls) -> str:
        """Get output folder path"""
        os.makedirs(cls.OUTPUT_FOLDER, exist_ok=True)
        return cls.OUTPUT_FOLDER

    @classmethod
    def settings(cls) -> Dict[str, Any]:
        """All UPPER_CASE settings visible on this class"""
        return {k: getattr(cls, k) for k in dir(cls) if k.isupper() and not k.startswith('_')}

    @classmethod
    def apply(cls, overrides: Dict[str, Any]) -> 'Config':
        """
        Instance with overrides applied on top of the class defaults

        Keys match settings case-insensitively (`Tc` -> `TC`); values are cast
        to the type of the default.

        Raises:
            ValueError: Unknown key or a value that cannot be cast
        """
        known = cls.settings()
        cfg = cls()
        for key, raw in overrides.items():
            name = key.strip().upper()
            if name not in known:
                raise ValueError(f"Unknown configuration key '{key}'")
            setattr(cfg, name, _cast(name, raw, known[name]))
        return cfg

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> 'Config':
        """Read a flat key=value file on top of the defaults"""
        if path is None:
            return cls()
        if not Path(path).exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        return cls.apply(dotenv_values(path))


def _cast(name: str, raw: Any, default: Any) -> Any:
    if raw is None:
        raise ValueError(f"Configuration key '{name}' has no value")
    if not isinstance(raw, str):
        raw = str(raw)
    try:
        if isinstance(default, bool):
            lowered = raw.strip().lower()
            if lowered not in ('1', '0', 'true', 'false', 'yes', 'no'):
                raise ValueError(raw)
            return lowered in ('1', 'true', 'yes')
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ValueError(f"Invalid value for {name}: '{raw}'")
    return raw.strip()


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True


class TestingConfig(Config):
    """Testing configuration"""
    TESTING = True
    OUTPUT_FOLDER = str(Path(__file__).parent / 'test_runs')
    FIT_ATTITUDE_LOOP = False
    TUBE_ROLLOUTS = 100
    TUBE_HORIZON = 200
    N = 20
    N_EXTRA = 10
    DEMO_STEPS = 50


class ProductionConfig(Config):
    """Production configuration"""
    DEBUG = False


config_by_name = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig,
}
