"""Loading and rendering of the prompt template files shipped with the package.

Templates are plain text with [[NAME]] placeholders; rendering is literal
substitution, no escaping or logic.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_SLOT = re.compile(r"\[\[([A-Z_]+)\]\]")


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    """Read templates/<name>.txt from the package."""
    return resources.files("hayrick").joinpath(f"templates/{name}.txt").read_text(encoding="utf-8")


def render(template: str, **slots: str) -> str:
    """Substitute every [[NAME]] placeholder; unknown slots raise KeyError."""

    def sub(match: re.Match) -> str:
        key = match.group(1).lower()
        if key not in slots:
            raise KeyError(f"template slot [[{match.group(1)}]] not provided")
        return str(slots[key])

    return _SLOT.sub(sub, template)


def render_template(name: str, **slots: str) -> str:
    return render(load_template(name), **slots)
