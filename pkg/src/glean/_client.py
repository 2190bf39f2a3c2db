"""Minimal HTTP JSON client with retries, shared by judge and embedder."""

from __future__ import annotations

import time

import httpx


class TransportError(RuntimeError):
    """Request failed after all retries, or got a non-retryable status."""


def post_json(
    url: str,
    payload: dict,
    *,
    api_key: str | None = None,
    timeout_ms: int = 30_000,
    max_retries: int = 3,
    client: httpx.Client | None = None,
    backoff_s: float = 0.25,
) -> dict:
    """POST a JSON payload and return the decoded JSON response.

    Timeouts, transport failures, 429 and 5xx responses are retried up to
    max_retries times with exponential backoff; other 4xx statuses fail
    immediately.
    """
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    timeout = timeout_ms / 1000.0
    own_client = client is None
    cl = client if client is not None else httpx.Client(timeout=timeout)
    try:
        delay = backoff_s
        last_error = "no attempt made"
        for attempt in range(max_retries + 1):
            try:
                resp = cl.post(url, json=payload, headers=headers, timeout=timeout)
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise TransportError(f"HTTP {resp.status_code} from {url}")
                else:
                    return resp.json()
            if attempt < max_retries:
                time.sleep(delay)
                delay *= 2
        raise TransportError(
            f"request to {url} failed after {max_retries + 1} attempts "
            f"({last_error})"
        )
    finally:
        if own_client:
            cl.close()
