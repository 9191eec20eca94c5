"""Two-party secure training with secret-shared lookup tables."""

from .errors import *  # noqa: F401,F403
from .ring64 import FixedCfg, decode_fixed, encode_fixed, truncate_share  # noqa: F401
from .sharing import Share, make_shares, reconstruct  # noqa: F401

__version__ = "0.1.0"
