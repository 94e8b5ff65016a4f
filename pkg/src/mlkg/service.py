"""HTTP service exposing a knowledge backend over the JSON wire protocol.

The http MLLM backend posts ``{"prompt": ..., "image_base64": ...}`` and
expects ``{"text": ...}``; this app serves that contract. By default it
answers from the deterministic stub backend, which makes it a drop-in test
server; a real model can be wired in by passing any object with the backend
``query`` interface to :func:`create_app`.

Run standalone with ``uvicorn mlkg.service:app``.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .backends import StubMLLMBackend, decode_image_base64
from .errors import MLKGError


class KnowledgeQuery(BaseModel):
    prompt: str
    image_base64: Optional[str] = None


class KnowledgeAnswer(BaseModel):
    text: str


def create_app(backend=None) -> FastAPI:
    backend = backend or StubMLLMBackend()
    app = FastAPI(title="mlkg knowledge backend")

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/query", response_model=KnowledgeAnswer)
    def query(request: KnowledgeQuery) -> KnowledgeAnswer:
        if not request.prompt:
            raise HTTPException(status_code=422, detail="prompt must be non-empty")
        image = None
        if request.image_base64:
            try:
                image = decode_image_base64(request.image_base64)
            except Exception:
                raise HTTPException(status_code=422, detail="image_base64 is not a valid image")
        try:
            return KnowledgeAnswer(text=backend.query(request.prompt, image))
        except MLKGError as exc:
            raise HTTPException(status_code=500, detail=str(exc))

    return app


app = create_app()


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="127.0.0.1", port=8008)
