"""Exception hierarchy shared by every pipeline stage."""


class TaskGraphError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(TaskGraphError, ValueError):
    pass


class ProviderError(TaskGraphError):
    """Any failure coming out of a model provider."""


class TransportError(ProviderError):
    """Network or authentication failure that survived the retry budget."""


class MissingFixtureError(ProviderError, KeyError):
    def __init__(self, prompt_hash: str):
        super().__init__(prompt_hash)
        self.prompt_hash = prompt_hash

    def __str__(self) -> str:
        return f"no recorded completion for prompt hash {self.prompt_hash}"


class EmptySummaryError(TaskGraphError):
    pass


class NoKeyStepsError(TaskGraphError):
    pass


class CyclicGraphError(TaskGraphError):
    def __init__(self, cycle: list[int]):
        self.cycle = list(cycle)
        path = " -> ".join(str(s) for s in self.cycle)
        super().__init__(f"precondition cycle among key steps: {path}")


class InvalidGraphError(TaskGraphError):
    pass
