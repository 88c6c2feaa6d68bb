"""Exception hierarchy shared by every module."""


class LatentInvertError(Exception):
    pass


class DimensionError(LatentInvertError, ValueError):
    pass


class ConfigError(LatentInvertError, ValueError):
    pass


class ContractError(LatentInvertError, RuntimeError):
    pass


class EvaluationError(LatentInvertError, ArithmeticError):
    pass


class SpecError(LatentInvertError, ValueError):
    pass


class TrainingDiverged(LatentInvertError, RuntimeError):
    def __init__(self, step, losses):
        self.step = step
        self.losses = dict(losses)
        detail = ", ".join(f"{k}={v!r}" for k, v in self.losses.items())
        super().__init__(f"non-finite loss at step {step}: {detail}")


class CheckpointError(LatentInvertError, ValueError):
    pass


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncationError(CheckpointError):
    pass


class PGMError(LatentInvertError, ValueError):
    pass
