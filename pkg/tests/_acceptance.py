"""Registry of acceptance outcomes, printed by the terminal-summary hook in conftest."""

RESULTS: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    RESULTS[criterion] = (bool(passed), detail)
