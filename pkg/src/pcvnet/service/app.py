"""FastAPI service wrapping the training/evaluation runners.

Jobs run synchronously in the request handler: runs at the scale this
service targets finish in minutes, and the CLI drives the app in-process by
default. Errors map onto the package's three categories so clients can
translate them into exit codes.
"""

from __future__ import annotations

from importlib.metadata import PackageNotFoundError, version

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..errors import ConfigError, DataError, NumericalError, PcvError
from ..training import (
    RunConfig,
    run_diagnose,
    run_e2e,
    run_eval,
    run_finetune,
    run_pretrain,
    run_probe,
    run_report,
    run_synth,
)
from .schemas import (
    DiagnoseResponse,
    EvalResponse,
    HealthResponse,
    ReportResponse,
    SynthResponse,
    TrainResponse,
)

try:
    _VERSION = version("pcvnet")
except PackageNotFoundError:
    _VERSION = "0.0.0"

app = FastAPI(title="pcvnet", version=_VERSION)


@app.exception_handler(PcvError)
async def pcv_error_handler(request: Request, exc: PcvError):
    status = 500 if isinstance(exc, NumericalError) else 400
    body = {"category": exc.category, "message": str(exc)}
    if isinstance(exc, DataError):
        body["code"] = exc.code
    return JSONResponse(status_code=status, content=body)


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=_VERSION)


def _with_mode(cfg: RunConfig, mode: str) -> RunConfig:
    return cfg.model_copy(update={"mode": mode})


@app.post("/v1/synth-data", response_model=SynthResponse)
def synth_data(cfg: RunConfig) -> SynthResponse:
    return SynthResponse(**run_synth(_with_mode(cfg, "synth-data")))


@app.post("/v1/pretrain", response_model=TrainResponse)
def pretrain(cfg: RunConfig) -> TrainResponse:
    return TrainResponse(**run_pretrain(_with_mode(cfg, "pretrain")).to_dict())


@app.post("/v1/finetune", response_model=TrainResponse)
def finetune(cfg: RunConfig) -> TrainResponse:
    return TrainResponse(**run_finetune(_with_mode(cfg, "finetune")).to_dict())


@app.post("/v1/probe", response_model=TrainResponse)
def probe(cfg: RunConfig) -> TrainResponse:
    return TrainResponse(**run_probe(_with_mode(cfg, "probe")).to_dict())


@app.post("/v1/e2e", response_model=TrainResponse)
def e2e(cfg: RunConfig) -> TrainResponse:
    return TrainResponse(**run_e2e(_with_mode(cfg, "e2e")).to_dict())


@app.post("/v1/eval", response_model=EvalResponse)
def eval_endpoint(cfg: RunConfig) -> EvalResponse:
    return EvalResponse(**run_eval(_with_mode(cfg, "eval")))


@app.post("/v1/diagnose", response_model=DiagnoseResponse)
def diagnose(cfg: RunConfig) -> DiagnoseResponse:
    return DiagnoseResponse(**run_diagnose(_with_mode(cfg, "diagnose")))


@app.post("/v1/report", response_model=ReportResponse)
def report(cfg: RunConfig) -> ReportResponse:
    return ReportResponse(**run_report(_with_mode(cfg, "report")))
