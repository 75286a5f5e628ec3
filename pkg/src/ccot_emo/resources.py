"""Access to the data files shipped inside the package (templates, lexicon, tables)."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

PROMPT_VERSION = "v1"


def _data_root():
    return resources.files("ccot_emo") / "data"


@lru_cache(maxsize=None)
def load_json(name: str) -> dict:
    return json.loads((_data_root() / name).read_text(encoding="utf-8"))


def load_template(name: str, version: str = PROMPT_VERSION, override_dir: str | Path | None = None) -> str:
    """Read ``prompts/<name>.<version>.txt``; an override directory wins when it has the file."""
    filename = f"{name}.{version}.txt"
    if override_dir is not None:
        candidate = Path(override_dir) / filename
        if candidate.exists():
            return _strip_final_newline(candidate.read_text(encoding="utf-8"))
    return _strip_final_newline((_data_root() / "prompts" / filename).read_text(encoding="utf-8"))


def _strip_final_newline(text: str) -> str:
    return text[:-1] if text.endswith("\n") else text
