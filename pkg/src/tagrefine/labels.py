"""Label canonicalization and the three label spaces.

Every label string entering the system goes through :func:`canon_label`
exactly once, at parse time; everything downstream compares labels by
plain string equality.
"""

from __future__ import annotations

import enum
import re

_WS = re.compile(r"\s+")


def canon_label(text: str) -> str:
    """Canonical form: lowercase, trimmed, internal whitespace collapsed.

    Raises ValueError if the result is empty.
    """
    out = _WS.sub(" ", text.strip()).lower()
    if not out:
        raise ValueError("empty label")
    return out


def tokens(label: str) -> list[str]:
    """Tokens of a (canonical) label; multiword labels split on spaces."""
    return label.split(" ")


class Space(enum.Enum):
    """Where a refined label lives: concrete, generalized, or abstract."""

    CL = "CL"
    XL = "XL"
    AL = "AL"


class Origin(enum.Enum):
    """How a visual candidate entered a box's candidate set."""

    ORIGINAL = "ORIGINAL"
    SIMILAR = "SIMILAR"
    HYPERNYM = "HYPERNYM"


# Candidate origin determines the output space of a chosen visual label.
SPACE_OF_ORIGIN = {
    Origin.ORIGINAL: Space.CL,
    Origin.SIMILAR: Space.CL,
    Origin.HYPERNYM: Space.XL,
}

GLOBAL_BOX = "GLOBAL"
