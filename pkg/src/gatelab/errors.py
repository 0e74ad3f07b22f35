"""Exception types raised across gatelab."""


class GateLabError(Exception):
    """Base class for all gatelab errors."""


class InvalidInput(GateLabError, ValueError):
    pass


class EmptyInput(GateLabError, ValueError):
    pass


class EmptyResponse(GateLabError, ValueError):
    """A response has no valid (non-padding) token positions."""


class InvalidToken(GateLabError, ValueError):
    pass


class InvalidScenario(GateLabError, ValueError):
    pass


class InvalidSpec(GateLabError, ValueError):
    pass


class InvalidConfig(GateLabError, ValueError):
    pass


class MissingVariant(GateLabError, ValueError):
    """Canonical chosen/rejected variants are absent for some prompts."""

    def __init__(self, prompt_ids):
        self.prompt_ids = sorted(prompt_ids)
        super().__init__(
            "missing canonical 'chosen'/'rejected' variants for prompt_ids: "
            + ", ".join(self.prompt_ids)
        )


class Divergence(GateLabError, RuntimeError):
    """Training produced a non-finite loss. ``snapshot`` holds the state at abort."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
