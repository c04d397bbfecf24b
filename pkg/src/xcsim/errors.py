#!/usr/bin/env python3


class XcsimError(Exception):
    pass


# chain-core
class DuplicateAddress(XcsimError):
    pass


class UnknownAddress(XcsimError):
    pass


class UnknownSelector(XcsimError):
    pass


class InvalidNonce(XcsimError):
    pass


class OutOfGas(XcsimError):
    pass


class Revert(XcsimError):
    """
    Raised by a contract function to abort the current call
    """


# compact-chain
class UnknownContract(XcsimError):
    pass


class UnauthorizedTarget(XcsimError):
    pass


class WriteToReadOnly(XcsimError):
    pass


# synchronizer
class HeightGap(XcsimError):
    pass


class MirrorRejected(XcsimError):
    pass


# xchain-auth
class AdmissionRefused(XcsimError):
    pass


class InsufficientFunds(XcsimError):
    pass


class InsufficientCollateral(InsufficientFunds):
    pass


class UnknownRequest(XcsimError):
    pass


class DoubleSettle(XcsimError):
    pass


# router
class UnknownTargetChain(XcsimError):
    pass


class InvalidContractAddress(XcsimError):
    pass


# netsim
class UnknownChain(XcsimError):
    pass


class ConfigError(XcsimError):
    pass


class ScenarioFailure(XcsimError):
    """
    A scenario assertion did not hold. `trace_pointer` names the last trace
    line that was written before the failure was detected.
    """

    def __init__(self, message: str, trace_pointer: int = 0) -> None:
        super().__init__(message)
        self.trace_pointer = trace_pointer

    def __str__(self) -> str:
        msg = super().__str__()
        if self.trace_pointer:
            return f"{msg} (trace line {self.trace_pointer})"
        return msg
