"""
ADI Service Configuration
Handles environment variables and configuration for the ADI service
"""

import os
from pathlib import Path

from dotenv import load_dotenv

from adi_service.errors import ConfigurationError

# Load environment variables - try env.test first, then .env
project_root = Path(__file__).parent.parent
env_test = project_root / 'env.test'
env_file = project_root / '.env'

if env_test.exists():
    load_dotenv(env_test, override=True)
elif env_file.exists():
    load_dotenv(env_file)
else:
    load_dotenv()


class ADIConfig:
    """Configuration class for ADI service"""

    # Logging / output
    LOG_LEVEL: str = os.getenv('ADI_LOG_LEVEL', 'INFO')
    OUTPUT_DIR: str = os.getenv('ADI_OUTPUT_DIR', './adi_output')

    # Performance Configuration
    MAX_WORKERS: int = int(os.getenv('ADI_MAX_WORKERS', '4'))

    # Interrogation defaults
    DETECTION_THRESHOLD: float = float(os.getenv('ADI_DETECTION_THRESHOLD', '2.0'))
    WINDOW_BINS: int = int(os.getenv('ADI_WINDOW_BINS', '9'))
    SEGMENT_LENGTH: int = int(os.getenv('ADI_SEGMENT_LENGTH', '512'))
    BASELINE_CYCLES: int = int(os.getenv('ADI_BASELINE_CYCLES', '13'))
    NULL_LEVEL: float = float(os.getenv('ADI_NULL_LEVEL', '0.8'))

    # Reproducibility
    RANDOM_STATE: int = int(os.getenv('ADI_RANDOM_STATE', '0'))

    @classmethod
    def validate(cls) -> bool:
        """Validate that all configuration values are usable"""
        problems = []

        if cls.DETECTION_THRESHOLD <= 0:
            problems.append(f"ADI_DETECTION_THRESHOLD must be > 0 (got {cls.DETECTION_THRESHOLD})")
        if cls.WINDOW_BINS < 1 or cls.WINDOW_BINS % 2 == 0:
            problems.append(f"ADI_WINDOW_BINS must be a positive odd integer (got {cls.WINDOW_BINS})")
        seg = cls.SEGMENT_LENGTH
        if seg < 64 or seg & (seg - 1):
            problems.append(f"ADI_SEGMENT_LENGTH must be a power of two >= 64 (got {seg})")
        if cls.BASELINE_CYCLES < 3:
            problems.append(f"ADI_BASELINE_CYCLES must be >= 3 (got {cls.BASELINE_CYCLES})")
        if cls.MAX_WORKERS < 1:
            problems.append(f"ADI_MAX_WORKERS must be >= 1 (got {cls.MAX_WORKERS})")

        if problems:
            raise ConfigurationError(f"Invalid configuration: {problems}")

        return True


# Global config instance
config = ADIConfig()
