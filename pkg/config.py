"""
Runtime settings read from the environment (and an optional .env file).
"""

import os
from dataclasses import dataclass

from dotenv import load_dotenv

from evidence_schema import DEFAULT_HASH_ALGORITHM, HASH_DIGEST_LENGTHS, ManifestError


def _env_int(name: str, default: int, minimum: int = 1) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == '':
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ManifestError(f"environment variable {name}={raw!r} is not an integer")
    if value < minimum:
        raise ManifestError(f"environment variable {name}={value} must be >= {minimum}")
    return value


@dataclass(frozen=True)
class Settings:
    """Pipeline defaults; command-line flags override them."""

    log_level: str = 'INFO'
    log_dir: str = 'logs'
    hash_algorithm: str = DEFAULT_HASH_ALGORITHM
    strings_min_length: int = 4
    max_strings_per_file: int = 100000
    workers: int = 4
    no_color: bool = False

    @classmethod
    def from_env(cls, dotenv: bool = True) -> 'Settings':
        """Build settings from STITCHER_* environment variables."""
        if dotenv:
            load_dotenv()

        hash_algorithm = os.getenv('STITCHER_HASH', DEFAULT_HASH_ALGORITHM).lower()
        if hash_algorithm not in HASH_DIGEST_LENGTHS:
            raise ManifestError(
                f"environment variable STITCHER_HASH={hash_algorithm!r} is not one of "
                f"{', '.join(sorted(HASH_DIGEST_LENGTHS))}"
            )

        return cls(
            log_level=os.getenv('STITCHER_LOG_LEVEL', 'INFO').upper(),
            log_dir=os.getenv('STITCHER_LOG_DIR', 'logs'),
            hash_algorithm=hash_algorithm,
            strings_min_length=_env_int('STITCHER_STRINGS_MIN_LEN', 4),
            max_strings_per_file=_env_int('STITCHER_MAX_STRINGS', 100000),
            workers=_env_int('STITCHER_WORKERS', 4),
            no_color=os.getenv('STITCHER_NO_COLOR') is not None,
        )
