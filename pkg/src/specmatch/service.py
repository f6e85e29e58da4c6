"""HTTP ranking service over one checkpoint and one product catalog.

Everything is loaded once at startup into an immutable snapshot; every
request is answered from that snapshot, so identical requests get identical
responses for the life of the process. Errors use one wire shape:
{"code": <http status>, "message": <text>}.
"""

from __future__ import annotations

import hashlib
import json
import math
from contextlib import asynccontextmanager
from dataclasses import dataclass

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .data import SpecProduct, index_catalog, load_jsonl
from .errors import ConfigError, EmptyInputError, NumericError
from .evaluate import rank_candidates
from .text import load_embeddings, tokenize
from .train import Model, load_checkpoint, model_from_checkpoint

DEFAULT_TEMPLATE = "The {spec_name} is {spec_value}."


class RankRequest(BaseModel):
    product_id: str
    question: str
    top_k: int | None = Field(default=None, ge=1)


class RankedSpec(BaseModel):
    spec_name: str
    spec_value: str
    probability: float


class RankResponse(BaseModel):
    product_id: str
    ranked: list[RankedSpec]
    answer_sentence: str


class ProductSummary(BaseModel):
    product_id: str
    category: str
    spec_count: int


class HealthResponse(BaseModel):
    status: str
    checkpoint_digest: str
    vocab_size: int


@dataclass
class Snapshot:
    model: Model
    catalog: dict[str, SpecProduct]
    products: list[ProductSummary]
    templates: dict[str, str]
    checkpoint_digest: str
    vocab_size: int


def load_templates(path) -> dict[str, str]:
    """Per-category answer patterns with a "default" fallback; every pattern
    must render with {spec_name} and {spec_value} only."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in raw.items()
    ):
        raise ConfigError(f"{path}: expected an object mapping category to pattern")
    for category, pattern in raw.items():
        try:
            pattern.format(spec_name="x", spec_value="y")
        except (KeyError, IndexError, ValueError) as e:
            raise ConfigError(
                f"{path}: template for {category!r} is not renderable: {e}"
            ) from None
    return raw


def render_answer(templates: dict[str, str], category: str, spec_name: str, spec_value: str) -> str:
    pattern = templates.get(category) or templates.get("default") or DEFAULT_TEMPLATE
    return pattern.format(spec_name=spec_name, spec_value=spec_value)


def load_snapshot(
    checkpoint_path, embeddings_path, catalog_path, templates_path=None
) -> Snapshot:
    ckpt = load_checkpoint(checkpoint_path)
    vocab, table = load_embeddings(embeddings_path)
    model = model_from_checkpoint(ckpt, vocab, table)
    catalog = index_catalog(load_jsonl(catalog_path, SpecProduct))
    products = [
        ProductSummary(
            product_id=p.product_id, category=p.category, spec_count=len(p.specs)
        )
        for p in sorted(catalog.values(), key=lambda p: p.product_id)
    ]
    templates = load_templates(templates_path) if templates_path else {}
    with open(checkpoint_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    return Snapshot(
        model=model,
        catalog=catalog,
        products=products,
        templates=templates,
        checkpoint_digest=digest,
        vocab_size=len(vocab.tokens),
    )


def create_app(
    checkpoint_path, embeddings_path, catalog_path, templates_path=None
) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.snapshot = load_snapshot(
            checkpoint_path, embeddings_path, catalog_path, templates_path
        )
        yield

    app = FastAPI(title="specmatch", lifespan=lifespan)
    app.state.snapshot = None

    def _error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"code": status, "message": message})

    @app.exception_handler(HTTPException)
    async def as_error_body(request: Request, exc: HTTPException):
        return _error(exc.status_code, str(exc.detail))

    @app.exception_handler(RequestValidationError)
    async def as_bad_request(request: Request, exc: RequestValidationError):
        return _error(400, f"invalid request: {exc.errors()}")

    def snapshot() -> Snapshot:
        snap = app.state.snapshot
        if snap is None:
            raise HTTPException(status_code=503, detail="model is not loaded yet")
        return snap

    @app.get("/healthz", response_model=HealthResponse)
    async def healthz():
        snap = snapshot()
        return HealthResponse(
            status="ok",
            checkpoint_digest=snap.checkpoint_digest,
            vocab_size=snap.vocab_size,
        )

    @app.get("/products", response_model=list[ProductSummary])
    async def products():
        return snapshot().products

    @app.post("/rank", response_model=RankResponse)
    async def rank(request: RankRequest):
        snap = snapshot()
        product = snap.catalog.get(request.product_id)
        if product is None:
            raise HTTPException(
                status_code=404, detail=f"unknown product id {request.product_id!r}"
            )
        if not tokenize(request.question):
            raise HTTPException(status_code=400, detail="question is empty")
        names = [name for name, _ in product.specs]
        values = dict(product.specs)
        try:
            ranking = rank_candidates(
                snap.model, request.question, names, group_id=request.product_id
            )
        except EmptyInputError as e:
            raise HTTPException(status_code=400, detail=str(e)) from None
        except NumericError as e:
            raise HTTPException(status_code=500, detail=str(e)) from None
        if any(not math.isfinite(c.probability) for c in ranking.candidates):
            raise HTTPException(
                status_code=500, detail="model produced a non-finite probability"
            )
        top = ranking.candidates[0]
        shown = ranking.candidates
        if request.top_k is not None:
            shown = shown[: request.top_k]
        return RankResponse(
            product_id=request.product_id,
            ranked=[
                RankedSpec(
                    spec_name=c.text, spec_value=values[c.text], probability=c.probability
                )
                for c in shown
            ],
            answer_sentence=render_answer(
                snap.templates, product.category, top.text, values[top.text]
            ),
        )

    return app
