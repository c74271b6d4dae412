"""Exception hierarchy shared by every subpackage."""


class IntercrossError(Exception):
    """Base class for all errors raised by this package."""


class InvalidConfig(IntercrossError, ValueError):
    pass


class SeparationUnachievable(IntercrossError):
    """Raised when instance parameters cannot be drawn far enough apart."""


class UnknownInstance(IntercrossError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownClass(IntercrossError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyText(IntercrossError, ValueError):
    pass


class UnknownToken(IntercrossError, ValueError):
    pass


class CorruptFrames(IntercrossError):
    def __init__(self, utt_id, message):
        super().__init__(f"{utt_id}: {message}")
        self.utt_id = utt_id


class MissingFile(IntercrossError, FileNotFoundError):
    pass


class IoFailure(IntercrossError, OSError):
    pass


class EmptyCorpus(IntercrossError):
    pass


class NonFiniteInput(IntercrossError, ValueError):
    pass


class NonFiniteLoss(IntercrossError, FloatingPointError):
    def __init__(self, step, breakdown):
        super().__init__(f"non-finite loss at step {step}: {breakdown}")
        self.step = step
        self.breakdown = breakdown


class AlphaOutOfRange(IntercrossError, ValueError):
    pass
