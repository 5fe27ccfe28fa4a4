"""Exception hierarchy shared across the package."""


class GridSecError(Exception):
    pass


class InvalidModel(GridSecError):
    pass


class NonDiagonalTransition(InvalidModel):
    pass


class EmptySubregion(InvalidModel):
    pass


class DimensionMismatch(GridSecError):
    pass


class SingularInnovation(GridSecError):
    pass


class NotANeighbor(GridSecError):
    pass


class MissingDelta(GridSecError):
    pass


class SingularSigma(GridSecError):
    pass


class SingularPsi(GridSecError):
    pass


class AlreadyAlarmed(GridSecError):
    pass


class OutOfDomain(GridSecError):
    pass


class InvalidAlpha(GridSecError):
    pass


class MissingBlock(GridSecError):
    def __init__(self, timestep, oldest=None):
        self.timestep = timestep
        self.oldest = oldest
        msg = f"no block for timestep {timestep}"
        if oldest is not None:
            msg += f" (oldest retained: {oldest})"
        super().__init__(msg)


class MissingSchedule(GridSecError):
    pass


class UnknownSender(GridSecError):
    pass


class PackageRejected(GridSecError):
    def __init__(self, senders):
        self.senders = tuple(senders)
        super().__init__(f"packages rejected from nodes {list(self.senders)}")


class PuzzleRejected(GridSecError):
    pass


class LedgerFormatError(GridSecError):
    pass


class ConfigError(GridSecError):
    pass


class LedgerTampered(LedgerFormatError):
    """The file has its declared length but its contents were altered."""


class SealMismatch(LedgerTampered):
    """The file parses but its seal does not match the header and tip block."""
