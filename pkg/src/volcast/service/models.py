"""Request/response models for the service endpoints."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

from ..config import RunConfig
from ..synth import SynthConfig


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class SynthRequest(BaseModel):
    config: SynthConfig = SynthConfig()
    out_dir: str


class SynthResponse(BaseModel):
    out_dir: str
    files: list[str]
    n_companies: int
    n_days: int
    n_months: int
    missing_cells: int


class BacktestRequest(BaseModel):
    config: RunConfig
    out_dir: Optional[str] = None  # overrides config.output_dir


class MeanTauRow(BaseModel):
    approach: str
    variance_model: str
    taus: dict[str, Optional[float]]  # "q=1" -> mean tau (None when undefined)


class BacktestResponse(BaseModel):
    out_dir: str
    files: list[str]
    n_periods: int
    n_portfolios_per_period: list[int]
    mean_tau: dict[str, list[MeanTauRow]]  # subset -> table rows
    undefined_tau: dict[str, int]
    n_skips: int


class EstimateRequest(BaseModel):
    config: RunConfig
    portfolio_id: str
    period: str
    approach: Literal["direct", "factor"] = "direct"
    variance_model: Literal["naive", "garch"] = "naive"
    q: int = Field(default=1, ge=1)


class EstimateResponse(BaseModel):
    portfolio_id: str
    period: str
    scheme: str
    n_members: int
    estimate: float
    target: Optional[float] = None


class ValidateRequest(BaseModel):
    data_dir: str


class Violation(BaseModel):
    file: str
    message: str


class ValidateResponse(BaseModel):
    ok: bool
    violations: list[Violation]
