"""Run configuration: one YAML file drives synth, backtest and estimate.

The config either points at a data directory holding returns.csv,
loadings.csv and mcaps.csv, or embeds a synthetic-universe spec. All
randomness flows from the single top-level seed. Parsing and serialization
round-trip exactly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, Field, model_validator

from .backtest import SubsetDef
from .schemes import SchemeId
from .synth import SynthConfig


class SchemeGrid(BaseModel):
    approaches: list[Literal["direct", "factor"]] = ["direct", "factor"]
    variance_models: list[Literal["naive", "garch"]] = ["naive", "garch"]
    qs: list[int] = [1, 3, 6, 12]

    def expand(self) -> list[SchemeId]:
        return [
            SchemeId(a, m, q)
            for a in self.approaches
            for m in self.variance_models
            for q in self.qs
        ]


class ScheduleSpec(BaseModel):
    first_period: str = "2013-02"
    num_periods: int = Field(default=97, ge=1)
    period_months: int = Field(default=3, ge=1)


class SubsetSpec(BaseModel):
    name: str
    kind: Optional[Literal["long", "long_short"]] = None
    origin: Optional[Literal["original", "random"]] = None
    restriction: Optional[str] = None

    def to_def(self) -> SubsetDef:
        return SubsetDef(self.name, self.kind, self.origin, self.restriction)


class DataSpec(BaseModel):
    dir: Optional[str] = None
    synth: Optional[SynthConfig] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.dir is None) == (self.synth is None):
            raise ValueError("specify exactly one of data.dir or data.synth")
        return self


class PortfolioRulesSpec(BaseModel):
    min_cap: float = 2e8
    min_members: int = 40
    max_members: int = 300
    min_side: int = 20
    resample_draws: int = 50

    def to_rules(self):
        from .portfolios import PortfolioRules

        return PortfolioRules(
            min_cap=self.min_cap,
            min_members=self.min_members,
            max_members=self.max_members,
            min_side=self.min_side,
            resample_draws=self.resample_draws,
        )


class RunConfig(BaseModel):
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    output_dir: str = "out"
    data: DataSpec
    schemes: SchemeGrid = SchemeGrid()
    schedule: ScheduleSpec = ScheduleSpec()
    subsets: Union[Literal["default"], list[SubsetSpec]] = "default"
    resamples_per_original: int = Field(default=2, ge=0)
    region_map: Optional[str] = None  # CSV path; default = bundled map
    plot_data: bool = False
    export_factor_fit: bool = False
    garch_history_months: int = Field(default=36, ge=1)
    garch_min_obs: int = Field(default=100, ge=2)
    portfolio_rules: PortfolioRulesSpec = PortfolioRulesSpec()

    @model_validator(mode="after")
    def _at_least_one_scheme(self):
        if not self.schemes.expand():
            raise ValueError("config must define at least one scheme")
        return self


def load_config(path) -> RunConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raise ValueError(f"{path}: empty config")
    return RunConfig.model_validate(raw)


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.model_dump(exclude_none=True), sort_keys=True)


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(dump_config(config))
