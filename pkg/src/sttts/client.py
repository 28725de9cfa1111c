"""Minimal HTTP client for ``sttts serve``."""

from __future__ import annotations

import httpx
import numpy as np


class ServiceError(RuntimeError):
    pass


class ServiceClient:
    def __init__(self, base_url: str, timeout: float = 60.0, http: httpx.Client | None = None):
        # ``http`` lets callers supply a preconfigured client (e.g. an in-process test client)
        self._http = http or httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout)

    def _post(self, path: str, body: dict) -> dict:
        try:
            r = self._http.post(path, json=body)
        except httpx.HTTPError as exc:
            raise ServiceError(f"cannot reach service: {exc}") from exc
        if r.status_code != 200:
            try:
                detail = r.json().get("detail", r.text)
            except ValueError:
                detail = r.text
            raise ServiceError(f"{path} failed ({r.status_code}): {detail}")
        return r.json()

    def health(self) -> dict:
        return self._http.get("/health").json()

    def synthesize(self, text: str, tag: str | None = None, reference_mel=None):
        body: dict = {"text": text}
        if tag is not None:
            body["tag"] = tag
        if reference_mel is not None:
            body["reference_mel"] = np.asarray(reference_mel, dtype=float).tolist()
        data = self._post("/synthesize", body)
        return np.asarray(data["mel"], dtype=np.float32), np.asarray(data["durations"], dtype=np.int64)

    def embed_tags(self, tags: list[str]) -> np.ndarray:
        rows = self._post("/embed", {"tags": tags})["rows"]
        return np.array([r["values"] for r in rows])

    def align(self, text: str, mel) -> np.ndarray:
        data = self._post("/align", {"text": text, "mel": np.asarray(mel, dtype=float).tolist()})
        return np.asarray(data["durations"], dtype=np.int64)
