"""Exception hierarchy shared across the package."""


class InvalidArgumentError(ValueError):
    pass


class PromptTooLongError(InvalidArgumentError):
    def __init__(self, token_count, max_tokens, text=None):
        self.token_count = token_count
        self.max_tokens = max_tokens
        self.text = text
        super().__init__(f"prompt tokenizes to {token_count} tokens, limit is {max_tokens}")


class SamplerStateError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, step, loss=float("nan")):
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at step {step} (loss={loss})")


class NumericalError(ArithmeticError):
    pass


class IntegrityError(RuntimeError):
    pass


class ContractError(RuntimeError):
    pass


class UndefinedMetricError(ValueError):
    pass


class ConfigError(ValueError):
    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message)
