"""Exception hierarchy shared by every platform module."""


class PaasError(Exception):
    """Base class for all platform errors."""


class NotFound(PaasError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# repository
class MalformedArchive(PaasError):
    pass


class LayoutViolation(PaasError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class AmbiguousArchive(LayoutViolation):
    pass


class DuplicateComponent(PaasError):
    pass


# resource market
class ProviderUnknown(PaasError):
    pass


class EmptyRentalPeriod(PaasError):
    pass


class AgreementExpired(PaasError):
    pass


class NoMatch(PaasError):
    pass


class OutOfStock(PaasError):
    pass


class AlreadyReleased(PaasError):
    pass


class WrongState(PaasError):
    pass


# control plane
class EnvMissing(PaasError):
    pass


class HostInactive(PaasError):
    pass


class HostOccupied(PaasError):
    """Each resource instance holds at most one basic service instance."""


class ComponentNotFound(NotFound):
    pass


class SchemaMismatch(PaasError):
    pass


class NoServingInstance(PaasError):
    pass


class Unbound(NotFound):
    pass


class UnknownService(NotFound):
    pass


# routing / data tier
class NoInstance(PaasError):
    pass


class UnknownUrl(NotFound):
    pass


class EmptyLayer(PaasError):
    pass


class SessionActive(PaasError):
    pass


class UnknownInstance(NotFound):
    pass


class WrongPhase(PaasError):
    pass


# monitoring
class SchemaViolation(PaasError, ValueError):
    pass


# autoscaler
class OrphanHost(PaasError):
    pass


class LastInstance(PaasError):
    pass


# simulator
class ScenarioInvalid(PaasError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class BadSpec(PaasError, ValueError):
    pass


class TraceCorrupt(PaasError):
    pass
