class LabException(Exception):
    """
    Base error for every failure the lab reports. ``exit_code`` is what the CLI returns when the error reaches it
    """

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class InvalidInputError(LabException):
    exit_code = 2


class DimensionMismatchError(InvalidInputError):
    pass


class DegeneratePosteriorError(LabException):
    exit_code = 3


class SingularFisherError(LabException):
    exit_code = 3


class FitError(LabException):
    exit_code = 4


class StudyError(LabException):
    exit_code = 4


class GenerationError(LabException):
    exit_code = 5


class TrainingError(LabException):
    exit_code = 5


class ReportIOError(LabException):
    exit_code = 6


class ConfigError(LabException):
    exit_code = 2

    def __init__(self, detail: str, lines: tuple[int, ...] = ()):
        self.lines = lines
        if lines:
            where = " and ".join(f"line {line}" for line in lines)
            detail = f"{where}: {detail}"
        super().__init__(detail)
