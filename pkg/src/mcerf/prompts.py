"""Versioned prompt and wordlist resources bundled with the package.

Prompt text lives in resources/prompts/<name>_v<N>.txt. Code refers to
prompts by bare name; the version is pinned here so a prompt revision is an
explicit, reviewable change.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

PROMPT_VERSIONS = {
    "main_system": 1,
    "vision_describe_system": 1,
    "vision_describe_user": 1,
    "deep_vision_system": 1,
    "router_system": 1,
    "router_user_vlm": 1,
    "router_user_ocr": 1,
    "adjudicator": 1,
    "keyword_extract": 1,
    "supervisor_system": 1,
    "supervisor_synthesize": 1,
}


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    version = PROMPT_VERSIONS[name]
    ref = resources.files("mcerf").joinpath(f"resources/prompts/{name}_v{version}.txt")
    return ref.read_text(encoding="utf-8").rstrip("\n")


@lru_cache(maxsize=None)
def load_stopwords() -> frozenset[str]:
    ref = resources.files("mcerf").joinpath("resources/stopwords.txt")
    words = [w.strip() for w in ref.read_text(encoding="utf-8").splitlines()]
    return frozenset(w for w in words if w)
