"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map error families to
distinct process exit statuses.
"""


class ArslError(Exception):
    exit_code = 1


# -- configuration / usage (exit 2) -----------------------------------------

class ConfigError(ArslError):
    exit_code = 2


# -- dataset ingestion (exit 3) ---------------------------------------------

class DatasetError(ArslError):
    exit_code = 3


class DuplicateClassError(DatasetError):
    pass


class ClassCountMismatchError(DatasetError):
    def __init__(self, expected, found):
        super().__init__(f"expected {expected} class folders, found {found}")
        self.expected = expected
        self.found = found


class EmptyClassError(DatasetError):
    def __init__(self, name):
        super().__init__(f"class {name!r} has no samples")
        self.name = name


class EmptyDatasetError(DatasetError):
    pass


class ImageDecodeError(DatasetError):
    def __init__(self, path, reason=""):
        msg = f"cannot decode image {path}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.path = path


class DatasetIOError(DatasetError):
    """Output location cannot be created or written."""


# -- preprocessing (exit 4) -------------------------------------------------

class PreprocessError(ArslError):
    exit_code = 4


class InfeasibleUnderSamplingError(PreprocessError):
    pass


class InfeasibleOverSamplingError(PreprocessError):
    pass


class ChannelPolicyError(PreprocessError):
    pass


class StratificationError(PreprocessError):
    pass


# -- models (exit 5) --------------------------------------------------------

class ModelError(ArslError):
    exit_code = 5


class WeightLoadError(ModelError):
    pass


class FreezePolicyError(ModelError):
    pass


class InputShapeError(ModelError):
    pass


# -- training (exit 6) ------------------------------------------------------

class TrainingError(ArslError):
    exit_code = 6


class LabelRangeError(TrainingError):
    pass


class ShapeError(TrainingError):
    pass


class EmptySplitError(TrainingError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


# -- evaluation / reporting (exit 7) ----------------------------------------

class ReportError(ArslError):
    exit_code = 7


class LengthMismatchError(ReportError):
    pass


class DatasetKeyError(ReportError):
    pass


class ParseError(ReportError):
    pass
