"""Per-period event extraction used to initialize environmental prompts.

Three extractors: offline_mean returns the article texts themselves,
sidecar_file reads precomputed event strings keyed by article id, and
http_llm asks an OpenAI-compatible chat endpoint to summarize the event of
each article. HTTP failures are retried with backoff and then downgraded to
offline_mean so training never blocks on a remote service.
"""
from __future__ import annotations

import json
import logging
import os
import time

import requests

log = logging.getLogger(__name__)

PROMPT_TEMPLATE = "Extract the event from the article: {text}"

ENDPOINT_ENV = "MISDER_LLM_ENDPOINT"
KEY_ENV = "MISDER_LLM_KEY"


def extract_events(articles, extractor: str = "offline_mean",
                   sidecar_path: str | None = None,
                   endpoint: str | None = None,
                   retries: int = 3, backoff: float = 1.0) -> list[str]:
    """One event string per article, aligned with the input order."""
    if extractor == "offline_mean":
        return [a.text for a in articles]
    if extractor == "sidecar_file":
        if sidecar_path is None:
            raise ValueError("sidecar_file extractor needs sidecar_path")
        return _from_sidecar(articles, sidecar_path)
    if extractor == "http_llm":
        return _from_llm(articles, endpoint, retries, backoff)
    raise ValueError(f"unknown extractor {extractor!r}")


def _from_sidecar(articles, path: str) -> list[str]:
    table = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            table[str(obj["id"])] = str(obj["event"])
    out = []
    missing = 0
    for a in articles:
        if a.id in table:
            out.append(table[a.id])
        else:
            missing += 1
            out.append(a.text)  # fall back to the article itself
    if missing:
        log.warning("sidecar %s missing %d ids; using article texts", path, missing)
    return out


def _from_llm(articles, endpoint, retries: int, backoff: float) -> list[str]:
    endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
    key = os.environ.get(KEY_ENV, "")
    if not endpoint:
        raise ValueError(f"http_llm extractor needs an endpoint ({ENDPOINT_ENV})")
    headers = {"Content-Type": "application/json"}
    if key:
        headers["Authorization"] = f"Bearer {key}"
    out = []
    for a in articles:
        body = {
            "model": "default",
            "messages": [{"role": "user",
                          "content": PROMPT_TEMPLATE.format(text=a.text)}],
        }
        event = None
        for attempt in range(retries):
            try:
                resp = requests.post(endpoint, headers=headers, json=body, timeout=30)
                resp.raise_for_status()
                event = resp.json()["choices"][0]["message"]["content"]
                break
            except (requests.RequestException, KeyError, IndexError, ValueError) as e:
                log.debug("llm attempt %d for %s failed: %s", attempt + 1, a.id, e)
                if attempt + 1 < retries:
                    time.sleep(backoff * (2 ** attempt))
        if event is None:
            log.warning("llm extraction failed for %s after %d tries; "
                        "falling back to article text", a.id, retries)
            event = a.text
        out.append(event)
    return out
