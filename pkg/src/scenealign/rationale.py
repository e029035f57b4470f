"""Step-wise rationale type shared by grounding and generation."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Sequence

from .errors import UnparseableResponse

logger = logging.getLogger(__name__)

_STEP_RE = re.compile(r"^\s*(\d+)[.)]\s*(.*\S)?\s*$")
_CONCLUSION_RE = re.compile(r"^\s*conclusion\s*[:.]\s*(.*?)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class Rationale:
    """Numbered reasoning steps followed by a one-line conclusion.

    ``raw_text`` keeps the exact text the rationale came from; for rationales
    built programmatically it is the canonical rendering of the steps.
    """

    steps: tuple[str, ...]
    conclusion: str
    raw_text: str

    def __post_init__(self):
        if not self.steps:
            raise ValueError("rationale requires at least one step")

    @classmethod
    def from_steps(cls, steps: Sequence[str], conclusion: str) -> "Rationale":
        steps = tuple(s.strip() for s in steps)
        conclusion = conclusion.strip()
        lines = [f"{i}. {step}" for i, step in enumerate(steps, start=1)]
        lines.append(f"Conclusion: {conclusion}")
        return cls(steps, conclusion, "\n".join(lines))

    @classmethod
    def parse(cls, text: str, *, strict: bool = False) -> "Rationale":
        """Parse the numbered-steps format.

        Lenient mode folds free-form responses into a single-step rationale
        with a diagnostic; strict mode raises :class:`UnparseableResponse`.
        """
        steps: list[str] = []
        conclusion = ""
        for line in text.splitlines():
            m = _CONCLUSION_RE.match(line)
            if m:
                conclusion = m.group(1)
                continue
            m = _STEP_RE.match(line)
            if m:
                steps.append(m.group(2) or "")
        steps = [s for s in steps if s]
        if steps:
            return cls(tuple(steps), conclusion, text)
        if strict or not text.strip():
            raise UnparseableResponse("no numbered steps found in response")
        logger.warning("free-form response; falling back to a single-step rationale")
        return cls((text.strip(),), conclusion, text)

    def segments(self) -> tuple[str, ...]:
        """Steps plus the conclusion (when non-empty) as matchable segments."""
        if self.conclusion.strip():
            return self.steps + (self.conclusion,)
        return self.steps
