"""Exception hierarchy shared by all rdcc modules."""


class RDError(Exception):
    """Base class for every error raised by rdcc."""


class InputError(RDError, ValueError):
    """Invalid argument: dimension mismatch, bad parameter, malformed file."""


class SolverError(RDError, RuntimeError):
    """The dual functional is infinite or the iteration cannot proceed."""


class CertificateError(RDError):
    """A partition value vanishes on positive source mass."""


class PerturbationInfeasible(RDError):
    """Normalising the far component would need a non-positive scale."""
