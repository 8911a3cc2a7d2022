"""Exception hierarchy shared across the package.

Config-level problems derive from :class:`ConfigError` (CLI exit code 1),
everything raised while crunching numbers derives from :class:`BauError`
(CLI exit code 2).
"""


class BauError(Exception):
    """Base class for all runtime errors raised by this package."""


class ConfigError(BauError):
    """Base class for errors caused by an invalid configuration."""


class InvalidSpec(ConfigError):
    """A dataset / augmentation / experiment spec violates its invariants."""


class UnknownConfigKey(ConfigError):
    def __init__(self, key: str):
        super().__init__(f"unknown config key: {key!r}")
        self.key = key


class ZeroNormRow(BauError):
    def __init__(self, index: int):
        super().__init__(f"row {index} has norm <= 1e-12 and cannot be normalized")
        self.index = index


class DimensionMismatch(BauError):
    pass


class EmptyInput(BauError):
    pass


class KTooLarge(BauError):
    def __init__(self, k: int, pool_size: int):
        super().__init__(f"k={k} must satisfy 1 <= k < pool size {pool_size}")
        self.k = k
        self.pool_size = pool_size


class NoPositivePairs(BauError):
    pass


class TooFewRows(BauError):
    pass


class EmptyDomainPrototypes(BauError):
    def __init__(self, domain: int):
        super().__init__(f"no other-class prototypes available for domain {domain}")
        self.domain = domain


class LabelOutOfRange(BauError):
    pass


class DegenerateBatch(BauError):
    """An anchor is missing a positive or a negative within the batch."""


class NonFiniteComponent(BauError):
    """A loss component came out NaN or infinite."""


class EmptyClass(BauError):
    def __init__(self, class_id: int):
        super().__init__(f"class {class_id} has no features")
        self.class_id = class_id


class InitDegenerate(BauError):
    def __init__(self, class_id: int):
        super().__init__(f"prototype for class {class_id} collapsed to zero norm")
        self.class_id = class_id


class UnknownClass(BauError):
    def __init__(self, class_id: int):
        super().__init__(f"class {class_id} does not exist in the bank")
        self.class_id = class_id


class ShapeMismatch(BauError):
    pass


class DegenerateEmbedding(BauError):
    """The encoder produced a zero-norm pre-embedding row."""


class StepOutOfRange(BauError):
    def __init__(self, step: float):
        super().__init__(f"finite-difference step {step} outside [1e-7, 1e-3]")
        self.step = step


class NotEnoughIdentities(BauError):
    pass


class NoRelevant(BauError):
    """A ranking contains no relevant entries."""


class EmptyGallery(BauError):
    pass
