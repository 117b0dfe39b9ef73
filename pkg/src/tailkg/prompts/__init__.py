"""Prompt templates shipped as versioned text assets.

Slots are written ``{name}`` and filled by plain substitution, so the rest of
a template may contain any characters.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

TEMPLATE_VERSION = "v1"

NAMES = (
    "qa_generation",
    "conv_generation",
    "relation_ranking_system",
    "relation_ranking_user",
    "answer_system_no_knowledge",
    "answer_system_knowledge",
)

_SLOT = re.compile(r"\{([a-z_]+)\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    version: str
    body: str

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(_SLOT.findall(self.body)))

    def render(self, **values: str) -> str:
        missing = set(self.slots) - set(values)
        if missing:
            raise KeyError(f"template {self.name} needs slots {sorted(missing)}")
        return _SLOT.sub(lambda m: values[m.group(1)], self.body)


@lru_cache(maxsize=None)
def load_template(name: str, version: str = TEMPLATE_VERSION) -> PromptTemplate:
    if name not in NAMES:
        raise KeyError(f"unknown template {name!r}")
    text = resources.files(__name__).joinpath(f"{name}.{version}.txt").read_text(encoding="utf-8")
    if text.endswith("\n"):
        text = text[:-1]
    return PromptTemplate(name, version, text)
