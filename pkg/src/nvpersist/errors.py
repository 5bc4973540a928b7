"""Exception types shared across the toolkit."""


class PersistError(Exception):
    pass


class InvalidArgument(PersistError, ValueError):
    pass


class RangeError(PersistError, IndexError):
    pass


class NotFound(PersistError, LookupError):
    pass


class UnsupportedOperation(PersistError):
    pass


class ContractViolation(PersistError):
    """A caller broke a versioning or async-flush usage contract."""


class NotInitialized(PersistError):
    pass


class AlreadyInitialized(PersistError):
    pass


class SimulatedCrash(PersistError):
    """Raised when an armed crash point fires; volatile state is already gone."""

    def __init__(self, event: int):
        super().__init__(f"simulated crash at event {event}")
        self.event = event
