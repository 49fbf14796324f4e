"""Exception hierarchy shared by every layer of the package."""


class VsclusterError(Exception):
    """Base class for all package errors."""


class ValidationError(VsclusterError, ValueError):
    """An input violates a documented precondition."""


class ChainRangeError(VsclusterError, IndexError):
    """A chain index lies outside 1..N."""


class OrderingError(VsclusterError, ValueError):
    """Two disclosures were passed in the wrong order."""


class InsufficientObservationsError(VsclusterError, ValueError):
    """A VSC or average SNR was requested over an empty window."""


class DegenerateClusterError(VsclusterError):
    """No admissible member besides the initiator."""


class HostBelowThresholdError(VsclusterError):
    """The initiator's own VSC does not meet the threshold."""


class ClusterExpiredError(VsclusterError):
    """The cluster lifetime has elapsed."""


class NotAMemberError(VsclusterError):
    """The sender's chain value is not part of the cluster."""


class ConflictError(VsclusterError):
    """A VIN is already registered."""


class UnknownHostError(VsclusterError):
    """A cluster request named an unregistered host."""


class ScenarioError(ValidationError):
    """A scenario file is malformed; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class AssumptionViolationError(VsclusterError):
    """An eavesdropper's SNR is not below the observed mean at some host."""
