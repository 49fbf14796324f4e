"""Hash-chain based secure vehicle clusters.

Vehicles compute a vehicular secrecy capacity (VSC) from per-link SNR,
disclose VIN-seeded hash-chain values when the VSC clears a threshold, form
clusters whose shared chain information yields a group key, and exchange
AEAD-protected broadcasts. An MEC service variant forms clusters on request.
"""

__version__ = "0.1.0"

from .channel import ChannelInfo, ChannelParams, Position, VscInputs, capacity, vsc
from .cluster import Announcement, SecureCluster, derive_group_key, form_cluster
from .hashchain import ChainDisclosure, Digest, HashChain, Vin, disclose, generate_chain
from .hashchain import verify_disclosure, verify_link
from .kernels import BACKEND

__all__ = [
    "BACKEND",
    "Announcement",
    "ChainDisclosure",
    "ChannelInfo",
    "ChannelParams",
    "Digest",
    "HashChain",
    "Position",
    "SecureCluster",
    "Vin",
    "VscInputs",
    "capacity",
    "derive_group_key",
    "disclose",
    "form_cluster",
    "generate_chain",
    "verify_disclosure",
    "verify_link",
    "vsc",
]
