"""Exceptions raised by the SODA-RL toolkit"""


class SodaError(Exception):
    """Base class for all errors raised by this package"""
    pass


class InvalidInputError(SodaError, ValueError):
    """An argument is outside of the domain of the operation"""
    pass


class SchemaError(SodaError):
    """States, trajectories or datasets do not agree with their schema"""
    pass


class DatasetFormatError(SodaError):
    """A trajectory file could not be parsed"""

    def __init__(self, lineno, msg):
        super(DatasetFormatError, self).__init__("line {}: {}".format(lineno, msg))
        self.lineno = lineno


class ConfigError(SodaError):
    """Invalid configuration values or files"""
    pass


class UnknownDrugError(ConfigError, KeyError):
    """A vasopressor is missing from the norepinephrine conversion table"""

    def __str__(self):
        return Exception.__str__(self)


class TrainingError(SodaError):
    """A training step produced non-finite values"""

    def __init__(self, msg, epoch=None, step=None):
        super(TrainingError, self).__init__(
            "epoch {}, step {}: {}".format(epoch, step, msg) if epoch is not None else msg)
        self.epoch = epoch
        self.step = step


class RunnerError(SodaError):
    """For errors which are completely on the client side and are thus recoverable"""
    pass
