"""
Exception hierarchy for Team Strength Studio.

Every failure raised on purpose by the library derives from
StrengthModelError so the CLI can map it to an exit code.
"""

from typing import Optional


class StrengthModelError(Exception):
    """Base class for all library errors."""


class ConfigError(StrengthModelError, ValueError):
    """Invalid run configuration (CLI exit code 2)."""


class IngestError(StrengthModelError, ValueError):
    """A match CSV row could not be parsed."""

    def __init__(self, reason: str, line: Optional[int] = None):
        self.reason = reason
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{reason}")


class ScheduleError(StrengthModelError, ValueError):
    """Records cannot be arranged into a valid week schedule."""


class ContradictoryEvidenceError(StrengthModelError, ArithmeticError):
    """A belief or message collapsed to all zeros."""

    def __init__(self, where: str):
        self.where = where
        super().__init__(f"contradictory evidence at {where}")


class NonFiniteMessageError(StrengthModelError, ArithmeticError):
    """A message picked up NaN or infinity."""

    def __init__(self, where: str):
        self.where = where
        super().__init__(f"non-finite message at {where}")


class UnknownTeamError(StrengthModelError, LookupError):
    """A team id or name is not known to the schedule or posterior."""

    def __init__(self, team, detail: str = ""):
        self.team = team
        suffix = f" ({detail})" if detail else ""
        super().__init__(f"unknown team {team!r}{suffix}")


class InstanceTooLargeError(StrengthModelError, ValueError):
    """Exhaustive enumeration was asked for too many joint states."""

    def __init__(self, states: int, limit: int):
        self.states = states
        self.limit = limit
        super().__init__(f"enumeration needs {states} joint states, limit is {limit}")


class TrainingError(StrengthModelError, RuntimeError):
    """EM failed; carries the restart and iteration where it happened."""

    def __init__(self, message: str, restart: Optional[int] = None, iteration: Optional[int] = None):
        self.restart = restart
        self.iteration = iteration
        context = []
        if restart is not None:
            context.append(f"restart {restart}")
        if iteration is not None:
            context.append(f"iteration {iteration}")
        prefix = f"[{', '.join(context)}] " if context else ""
        super().__init__(f"{prefix}{message}")
