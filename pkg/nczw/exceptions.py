__all__ = ['NczwException', 'ContractViolationError', 'NotHermitianError', 'NotProjectionError', 'NotPositiveError',
           'LevelOutOfRangeError', 'InvalidExponentError', 'GridMismatchError', 'EigensolverError',
           'CommutationError', 'RoughWeightError', 'SingularSquareFunctionError', 'InvalidWeightSpecError',
           'InvalidKernelSpecError', 'ConfigError', 'DiagnosticAbortError']


class NczwException(Exception):
    """ A domain exception for nczw errors. """
    pass


class ContractViolationError(NczwException):
    """ Raise when an input violates a documented precondition. """
    pass


class NotHermitianError(ContractViolationError):
    """ Raise when a Hermitian element is required but the input is not self-adjoint. """
    pass


class NotProjectionError(ContractViolationError):
    """ Raise when a projection is required but the input is not idempotent and self-adjoint. """
    pass


class NotPositiveError(ContractViolationError):
    """ Raise when a positive element or field is required. """
    pass


class LevelOutOfRangeError(ContractViolationError):
    """ Raise when a dyadic level lies outside 0..J """
    pass


class InvalidExponentError(ContractViolationError):
    """ Raise when an exponent is outside its admissible range. """
    pass


class GridMismatchError(ContractViolationError):
    """ Raise when combining objects built on different grids or sources. """
    pass


class EigensolverError(NczwException):
    """ Raise when the Hermitian eigensolver fails to converge. """
    pass


class CommutationError(NczwException):
    """ Raise when a stopping projection fails its commutation or height check. """
    pass


class RoughWeightError(NczwException):
    """ Raise when no reverse Hölder exponent on the grid qualifies. """
    pass


class SingularSquareFunctionError(NczwException):
    """ Raise when a conditional square function is singular and no regularizer was given. """
    pass


class InvalidWeightSpecError(NczwException):
    """ Raise when a weight spec string cannot be parsed or is inadmissible. """
    pass


class InvalidKernelSpecError(NczwException):
    """ Raise when a kernel spec string cannot be parsed. """
    pass


class ConfigError(NczwException):
    """ Raise when an experiment configuration is invalid. """
    pass


class DiagnosticAbortError(NczwException):
    """ Raise when a suite aborts; carries the theorem, lambda and seed being processed. """

    def __init__(self, message: str, theorem: str = None, lam: float = None, seed: int = None):
        super().__init__(f'{message} (theorem={theorem}, lambda={lam}, seed={seed})')
        self.theorem = theorem
        self.lam = lam
        self.seed = seed
