"""
Runtime configuration for ratmix.

Values are read once at import from the process environment, after
`.env.local` has been loaded, and exposed as module-level constants.
"""
import os

from dotenv import load_dotenv

from ratmix.errors import ConfigError

load_dotenv('.env.local')


def _env_number(name, default, cast):
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return cast(raw)
    except ValueError as e:
        raise ConfigError(f"{name}={raw!r} is not a valid number") from e


# Limits
BUDGET_MB = _env_number("RATMIX_BUDGET_MB", 512.0, float)  # Cap for dense state vectors, taboo tables and layouts (MiB)
RATIONAL_LIMIT = _env_number("RATMIX_RATIONAL_LIMIT", 512, int)  # Largest horizon accepted in rational mode
ROW_CUTOFF = _env_number("RATMIX_ROW_CUTOFF", 65536, int)  # Default state cutoff for rows of infinite-support chains
DYSON_HORIZON = _env_number("RATMIX_DYSON_HORIZON", 2_000_000, int)  # Longest defective recursion tried when searching L
LOG_LEVEL = os.getenv("RATMIX_LOG_LEVEL", "WARNING")  # Logging level installed by the command line

# Numerics
TRUNCATION_MASS = 1e-15  # Lifetime mass allowed to drop from a generator-backed row
DIRECT_RECURSION_LIMIT = 8192  # Float renewal recursions above this horizon use FFT series inversion
SPARSE_SUPPORT_LIMIT = 64  # Lifetimes with at most this many support points recurse sparsely
NEGATIVE_TOLERANCE = 1e-12  # Inverted lifetime masses below -tol mean "not a renewal sequence"
ZERO_TOLERANCE = 1e-14  # Float entries at or below this count as zero for support scans
EXACT_ENTRY_BYTES = 128  # Rough footprint of one Fraction entry, used for budget checks

# Diagnostics
DEFAULT_TOL = 1e-2  # Tolerance of "at horizon" verdicts
DEFAULT_EPS = 0.1  # Level of exceptional sets
FLATNESS = 0.01  # Relative increment over the last dyadic step that counts as Cauchy-flat


def budget_bytes():
    return int(BUDGET_MB * 1024 * 1024)
