"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: contract/config problems exit 1,
numeric failures exit 2, external-service failures exit 3.
"""


class ImgCoTError(Exception):
    exit_code = 1


class ContractError(ImgCoTError, ValueError):
    """A precondition on shapes, ranges or argument consistency was violated."""


class ConfigError(ContractError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


class MissingInputError(ContractError):
    def __init__(self, path, stage=None):
        self.path = str(path)
        where = f" (needed by {stage})" if stage else ""
        super().__init__(f"missing input file: {self.path}{where}")


class EmptyInputError(ContractError):
    pass


class LayoutInfeasibleError(ContractError):
    pass


class VocabError(ContractError):
    def __init__(self, chars):
        self.chars = sorted(set(chars))
        super().__init__("characters not covered by vocabulary: " + repr("".join(self.chars)))


class ParseError(ImgCoTError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class IncompatibleVersionError(ParseError):
    pass


class NumericError(ImgCoTError, ArithmeticError):
    exit_code = 2

    def __init__(self, message, primitive=None):
        self.primitive = primitive
        super().__init__(message)


class ServiceError(ImgCoTError):
    """Failure talking to an external scoring backend."""

    exit_code = 3


class ScoringError(ServiceError):
    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class RemoteConfigError(ServiceError):
    """Non-retryable 4xx response from the scoring endpoint."""

    def __init__(self, message, status=None):
        self.status = status
        super().__init__(message)


class RetryExhaustedError(ServiceError):
    def __init__(self, message, attempts):
        self.attempts = attempts
        super().__init__(f"{message} (gave up after {attempts} attempts)")


class ProtocolError(ServiceError):
    def __init__(self, message, fragment=None):
        self.fragment = fragment
        if fragment is not None:
            message = f"{message}: {fragment!r}"
        super().__init__(message)
