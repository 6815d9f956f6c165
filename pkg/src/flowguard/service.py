"""HTTP service wrapping the analyzer, planner, and simulator.

Run with ``uvicorn flowguard.service:app``.  Each endpoint accepts a
configuration document as text and returns the versioned report, its text
rendering, and the exit status the CLI would have used.
"""

from __future__ import annotations

from fastapi import FastAPI
from pydantic import BaseModel, Field

from . import __version__
from .reporting import run_analyze, run_check, run_plan, run_simulate
from .sim.engine import DEFAULT_EXHAUSTIVE_BOUND, DEFAULT_SAMPLES


class ConfigRequest(BaseModel):
    config: str = Field(description="configuration document text")


class SimulateRequest(ConfigRequest):
    fixture: str | None = Field(
        default=None, description="fixture name (default: all declared)"
    )
    exhaustive_bound: int = Field(
        default=DEFAULT_EXHAUSTIVE_BOUND,
        ge=1,
        description="max deliverable events for exhaustive interleaving",
    )
    samples: int = Field(
        default=DEFAULT_SAMPLES, ge=1, description="sampled schedules above the bound"
    )
    seed: int = Field(default=0, description="sampling seed")


class ReportResponse(BaseModel):
    exit_status: int
    report: dict
    text: str


class HealthResponse(BaseModel):
    status: str
    version: str


app = FastAPI(
    title="flowguard",
    version=__version__,
    description=(
        "Consistency analysis and coordination synthesis for annotated "
        "distributed dataflows, with interleaving simulation."
    ),
)


def _respond(report) -> ReportResponse:
    return ReportResponse(
        exit_status=report.exit_status,
        report=report.to_dict(),
        text=report.render_text(),
    )


@app.get("/v1/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/v1/analyze", response_model=ReportResponse)
def analyze_endpoint(request: ConfigRequest) -> ReportResponse:
    return _respond(run_analyze(request.config))


@app.post("/v1/plan", response_model=ReportResponse)
def plan_endpoint(request: ConfigRequest) -> ReportResponse:
    return _respond(run_plan(request.config))


@app.post("/v1/simulate", response_model=ReportResponse)
def simulate_endpoint(request: SimulateRequest) -> ReportResponse:
    return _respond(
        run_simulate(
            request.config,
            fixture=request.fixture,
            bound=request.exhaustive_bound,
            samples=request.samples,
            seed=request.seed,
        )
    )


@app.post("/v1/check", response_model=ReportResponse)
def check_endpoint(request: SimulateRequest) -> ReportResponse:
    return _respond(
        run_check(
            request.config,
            fixture=request.fixture,
            bound=request.exhaustive_bound,
            samples=request.samples,
            seed=request.seed,
        )
    )
