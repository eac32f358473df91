# services/errors.py
from typing import Optional


class LipEmbedError(ValueError):
    """Base class for every error raised by the services package."""


class ConfigError(LipEmbedError):
    pass


class PreconditionError(LipEmbedError):
    pass


class GridMismatchError(LipEmbedError):
    pass


class ExtensionError(LipEmbedError):
    pass


class BudgetError(LipEmbedError):
    pass


class SectionError(LipEmbedError):
    pass


class GenericityError(LipEmbedError):
    def __init__(self, message: str, condition: Optional[str] = None):
        super().__init__(message)
        self.condition = condition
