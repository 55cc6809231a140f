class ScoreFusionError(Exception):
    """
    Root of every error raised by the package
    """


class RejectedInputError(ScoreFusionError, ValueError):
    pass


class SingularTimeError(ScoreFusionError):
    pass


class DivergedTrajectoryError(ScoreFusionError):

    def __init__(self, step: int, message: str = None):
        self.step = step
        super().__init__(
            message or "Reverse trajectory became non-finite at step {}!".format(step)
        )


class InsufficientGridError(ScoreFusionError):
    pass


class FlaggedSampleError(ScoreFusionError):

    def __init__(self, indices):
        self.indices = [int(i) for i in indices]
        shown = self.indices[:20]
        super().__init__(
            "Target samples outside reference support at indices {}{}".format(
                shown, " ..." if len(self.indices) > len(shown) else ""
            )
        )


class PoisonedModelError(ScoreFusionError):
    pass


class TrainingDivergedError(ScoreFusionError):

    def __init__(self, message: str, curve: list):
        self.curve = list(curve)
        super().__init__(message)


class FrankWolfeAbortedError(ScoreFusionError):

    def __init__(self, message: str, trace):
        self.trace = trace
        super().__init__(message)


class SchemaMismatchError(ScoreFusionError):
    pass


class ConfigError(ScoreFusionError):
    pass
