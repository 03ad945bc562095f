"""Fenced-block exchange format between the LLM and the pipeline.

The LLM is instructed to emit machine-readable payloads inside fenced code
blocks tagged with a payload name, e.g.::

    ```subtasks
    - index: 1
      title: Reentrancy in withdraw
      target: withdraw
      concern: reentrancy
      priority: 1
    ```

Block bodies are YAML.  Parsing is tolerant: individual malformed entries are
dropped and counted, the caller decides when an empty result is an error.
"""
from __future__ import annotations

import re
from typing import Any, Optional

import yaml

_FENCE_RE = re.compile(r"```(?P<tag>[A-Za-z_][\w-]*)\s*\n(?P<body>.*?)```", re.DOTALL)


def extract_block(text: str, tag: str) -> Optional[str]:
    """Return the body of the first fenced block with the given tag, or None."""
    for m in _FENCE_RE.finditer(text):
        if m.group("tag") == tag:
            return m.group("body")
    return None


def parse_block(text: str, tag: str) -> Any:
    """Parse the tagged block body as YAML; None when the block is absent."""
    body = extract_block(text, tag)
    if body is None:
        return None
    try:
        return yaml.safe_load(body)
    except yaml.YAMLError:
        return None


def render_block(tag: str, payload: Any) -> str:
    body = yaml.safe_dump(payload, sort_keys=False, allow_unicode=True)
    return f"```{tag}\n{body}```"
