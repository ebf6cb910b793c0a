"""HTTP service: the v1 model-adapter wire protocol plus lab-only endpoints.

The /v1/complete response carries only the completion string, never
probabilities or logits; protocol deviations get a 4xx with a message.
"""

from __future__ import annotations

import logging
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .lm import CharLM, greedy_decode, train
from .store import JobBusyError, JobManager, JobState, ModelStore

logger = logging.getLogger(__name__)

DEFAULT_MAX_LEN = 200


class CompleteRequest(BaseModel):
    model_id: str
    prompt: str
    max_new_tokens: int = Field(gt=0, le=4096)
    deterministic: bool = True


class PairBody(BaseModel):
    prompt: str
    completion: str


class HyperParams(BaseModel):
    # lora_* fields are accepted and logged; this server fine-tunes all weights
    lora_rank: int = 8
    lora_alpha: float = 32.0
    dropout: float = 0.1
    learning_rate: float = 8e-5
    batch_size: int = 8
    checkpoint_every: int = 10
    epochs: int = 1


class FineTuneRequest(BaseModel):
    base_model_id: str
    pairs: list[PairBody]
    hyperparams: HyperParams = HyperParams()


class PretrainRequest(BaseModel):
    corpus_paths: list[str]
    member_paths: list[str] = []
    epochs: int = 200
    seed: int = 0
    learning_rate: float = 5e-3
    batch_size: int = 16
    max_len: int = DEFAULT_MAX_LEN
    emb_dim: int = 32
    hidden_dim: int = 128
    num_layers: int = 1


class ForgetRequest(BaseModel):
    model_id: str
    distractor_paths: list[str]
    epochs: int = 40
    seed: int = 1
    learning_rate: float = 5e-3
    batch_size: int = 16
    max_len: int = DEFAULT_MAX_LEN


def _read_documents(paths: list[str]) -> list[tuple[str, str]]:
    """(doc_id, text) per non-blank line, ids as <filename>#<line>."""
    documents: list[tuple[str, str]] = []
    for raw in paths:
        path = Path(raw)
        if not path.exists():
            raise HTTPException(status_code=400, detail=f"corpus path not found: {raw}")
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if line.strip():
                documents.append((f"{path.name}#{lineno}", line))
    if not documents:
        raise HTTPException(status_code=400, detail="no documents in the given paths")
    return documents


def create_app() -> FastAPI:
    app = FastAPI(title="catshift lab target", version="0.1.0")
    store = ModelStore()
    jobs = JobManager()
    membership: dict = {}
    state_lock = threading.Lock()

    def model_or_404(model_id: str) -> CharLM:
        try:
            return store.model(model_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown model {model_id!r}") from None

    @app.get("/lab/health")
    def health():
        return {"ok": True}

    @app.post("/v1/complete")
    def complete(request: CompleteRequest):
        if not request.prompt.strip():
            raise HTTPException(status_code=400, detail="empty prompt")
        if not request.deterministic:
            raise HTTPException(status_code=400, detail="only deterministic decoding is supported")
        model = model_or_404(request.model_id)
        with store.decode_lock:
            completion = greedy_decode(model, request.prompt, request.max_new_tokens)
        return {"completion": completion}

    @app.post("/v1/finetune")
    def finetune(request: FineTuneRequest):
        if not request.pairs:
            raise HTTPException(status_code=400, detail="no fine-tune pairs")
        if not store.exists(request.base_model_id):
            raise HTTPException(status_code=404, detail=f"unknown model {request.base_model_id!r}")
        hp = request.hyperparams
        logger.info(
            "fine-tune request on %s: %d pairs, lr=%g epochs=%d (lora r=%d alpha=%g logged only)",
            request.base_model_id, len(request.pairs), hp.learning_rate, hp.epochs,
            hp.lora_rank, hp.lora_alpha,
        )
        texts = [f"{p.prompt} {p.completion}" for p in request.pairs]
        digest = "|".join(texts).encode("utf-8")
        result_id = store.new_id("ft", digest)

        def work(job: JobState) -> str:
            trainable = store.fresh_trainable(request.base_model_id)

            def on_checkpoint(step: int, loss: float):
                checkpoint_id = f"{result_id}@s{step}"
                store.put(checkpoint_id, trainable, [])
                jobs.add_checkpoint(
                    job, {"step": step, "loss": round(loss, 6), "model_id": checkpoint_id}
                )

            log = train(
                trainable,
                texts,
                epochs=hp.epochs,
                learning_rate=hp.learning_rate,
                batch_size=hp.batch_size,
                seed=len(texts) + hp.epochs,
                checkpoint_every=hp.checkpoint_every,
                on_checkpoint=on_checkpoint,
            )
            store.put(result_id, trainable, log)
            return result_id

        try:
            job_id = jobs.submit(work)
        except JobBusyError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        return {"job_id": job_id}

    @app.get("/v1/finetune/{job_id}")
    def finetune_status(job_id: str):
        try:
            return jobs.response_for(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}") from None

    @app.post("/lab/pretrain")
    def pretrain(request: PretrainRequest):
        documents = _read_documents(request.corpus_paths)
        member_ids = [doc_id for doc_id, _ in _read_documents(request.member_paths)] if request.member_paths else []
        known = {doc_id for doc_id, _ in documents}
        missing = set(member_ids) - known
        if missing:
            raise HTTPException(
                status_code=400, detail=f"member subset not contained in corpus: {sorted(missing)[:5]}"
            )
        model = CharLM(request.emb_dim, request.hidden_dim, request.num_layers)
        log = train(
            model,
            [text for _, text in documents],
            epochs=request.epochs,
            learning_rate=request.learning_rate,
            batch_size=request.batch_size,
            seed=request.seed,
            max_len=request.max_len,
        )
        model_id = store.new_id("pretrain")
        store.put(model_id, model, log)
        manifest = {
            "model_id": model_id,
            "member_ids": member_ids,
            "n_documents": len(documents),
            "n_parameters": model.num_parameters(),
            "first_loss": log[0][1],
            "final_loss": log[-1][1],
        }
        with state_lock:
            membership.clear()
            membership.update(manifest)
        return manifest

    @app.post("/lab/forget")
    def forget(request: ForgetRequest):
        if not store.exists(request.model_id):
            raise HTTPException(status_code=404, detail=f"unknown model {request.model_id!r}")
        documents = _read_documents(request.distractor_paths)
        model = store.fresh_trainable(request.model_id)
        log = train(
            model,
            [text for _, text in documents],
            epochs=request.epochs,
            learning_rate=request.learning_rate,
            batch_size=request.batch_size,
            seed=request.seed,
            max_len=request.max_len,
        )
        model_id = store.new_id("forgot")
        store.put(model_id, model, log)
        return {"model_id": model_id, "first_loss": log[0][1], "final_loss": log[-1][1]}

    @app.get("/lab/membership")
    def get_membership():
        with state_lock:
            if not membership:
                raise HTTPException(status_code=404, detail="no pretrained model yet")
            return dict(membership)

    return app
