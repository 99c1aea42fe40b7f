"""FastAPI service wrapping the toolkit.

The service owns the filesystem it runs on: requests carry data/output
directory paths, jobs run synchronously, and responses return summaries
plus the files written. The CLI is a thin client of these endpoints.
"""

from __future__ import annotations

import math

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..backtest import BacktestResult
from ..panels import ConflictError, ParseError
from ..schemes import SchemeId
from ..workflows import (
    JobError,
    run_backtest_job,
    run_estimate_job,
    run_synth_job,
    run_validate_job,
)
from .models import (
    BacktestRequest,
    BacktestResponse,
    EstimateRequest,
    EstimateResponse,
    HealthResponse,
    MeanTauRow,
    SynthRequest,
    SynthResponse,
    ValidateRequest,
    ValidateResponse,
    Violation,
)


def _mean_tau_tables(result: BacktestResult) -> dict[str, list[MeanTauRow]]:
    report = result.report
    pairs = []
    for approach in ("direct", "factor"):
        for model in ("naive", "garch"):
            if any(s.approach == approach and s.variance_model == model for s in result.schemes):
                pairs.append((approach, model))
    qs = sorted({s.q for s in result.schemes})
    by_key = {(s.approach, s.variance_model, s.q): s for s in result.schemes}
    tables: dict[str, list[MeanTauRow]] = {}
    for subset in report.subsets:
        rows = []
        for approach, model in pairs:
            taus = {}
            for q in qs:
                scheme = by_key.get((approach, model, q))
                if scheme is None:
                    continue
                value = report.mean_tau(subset, scheme.label)
                taus[f"q={q}"] = None if math.isnan(value) else value
            rows.append(MeanTauRow(approach=approach, variance_model=model, taus=taus))
        tables[subset] = rows
    return tables


def create_app() -> FastAPI:
    app = FastAPI(
        title="volcast",
        description="Portfolio volatility forecasting and rank backtesting service",
        version=__version__,
    )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(version=__version__)

    @app.post("/synth", response_model=SynthResponse)
    def synth(request: SynthRequest) -> SynthResponse:
        try:
            stats = run_synth_job(request.config, request.out_dir)
        except (JobError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return SynthResponse(out_dir=request.out_dir, **stats)

    @app.post("/backtest", response_model=BacktestResponse)
    def backtest(request: BacktestRequest) -> BacktestResponse:
        try:
            result, files = run_backtest_job(request.config, out_dir=request.out_dir)
        except (JobError, ParseError, ConflictError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        report = result.report
        return BacktestResponse(
            out_dir=request.out_dir or request.config.output_dir,
            files=files,
            n_periods=len(report.periods),
            n_portfolios_per_period=[len(r.portfolios) for r in result.period_results],
            mean_tau=_mean_tau_tables(result),
            undefined_tau={
                f"{name}|{scheme}": n for (name, scheme), n in sorted(report.undefined.items())
            },
            n_skips=sum(len(r.skips) for r in result.period_results),
        )

    @app.post("/estimate", response_model=EstimateResponse)
    def estimate(request: EstimateRequest) -> EstimateResponse:
        try:
            scheme = SchemeId(request.approach, request.variance_model, request.q)
            out = run_estimate_job(request.config, request.portfolio_id, request.period, scheme)
        except (JobError, ParseError, ConflictError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return EstimateResponse(
            portfolio_id=out["portfolio_id"],
            period=out["period"],
            scheme=out["scheme"],
            n_members=out["n_members"],
            estimate=out["estimate"],
            target=out["target"],
        )

    @app.post("/validate", response_model=ValidateResponse)
    def validate(request: ValidateRequest) -> ValidateResponse:
        violations = run_validate_job(request.data_dir)
        return ValidateResponse(
            ok=not violations, violations=[Violation(**v) for v in violations]
        )

    return app


app = create_app()
