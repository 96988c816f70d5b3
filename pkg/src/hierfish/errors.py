"""Exception types shared across the package."""


class HierfishError(Exception):
    """Base class for all errors raised by hierfish."""


# taxonomy
class DuplicateName(HierfishError):
    pass


class EmptyTaxonomy(HierfishError):
    pass


class MalformedDocument(HierfishError):
    pass


class IndexOutOfRange(HierfishError):
    pass


# model
class EmptyInput(HierfishError):
    pass


class NonFiniteInput(HierfishError):
    pass


class DimensionMismatch(HierfishError):
    """Covers shape mismatches between params, inputs, and the taxonomy."""


class NonFiniteActivation(HierfishError):
    """A forward pass produced inf/nan; usually exploded parameters."""


# training
class LabelOutOfRange(HierfishError):
    pass


class InconsistentLabels(HierfishError):
    pass


class EmptyDataset(HierfishError):
    pass


class DivergedTraining(HierfishError):
    """Non-finite loss during training; learning rate too high."""


# inference / evaluation
class EmptyTrack(HierfishError):
    pass


class InvalidThreshold(HierfishError):
    pass


class EmptyEvalSet(HierfishError):
    pass


class TaxonomyMismatch(HierfishError):
    pass


# data
class InfeasibleConfig(HierfishError):
    pass


class SpeciesTooSmall(HierfishError):
    pass


class MalformedRecord(HierfishError):
    pass


# cli
class ConfigError(HierfishError):
    pass
