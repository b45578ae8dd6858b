"""Shared exception types for contract and domain violations."""


class ContractError(ValueError):
    """Input violates an operation's declared shape/validity contract."""


class DomainError(ValueError):
    """Scalar argument outside its declared domain (e.g. timestep range)."""
