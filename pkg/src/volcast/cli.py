"""Command-line client for the volcast service.

Every subcommand marshals its arguments into a service request and posts it
to an endpoint: against ``--server URL`` when given, otherwise against an
in-process instance of the app, so batch runs need no running server.
"""

from __future__ import annotations

import json
import sys

import click

from .config import RunConfig, load_config


def _client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _post(server: str | None, path: str, payload: dict) -> dict:
    with _client(server) as client:
        response = client.post(path, json=payload)
    body = response.json()
    if response.status_code != 200:
        detail = body.get("detail", body) if isinstance(body, dict) else body
        click.echo(f"error: {detail}", err=True)
        sys.exit(1)
    return body


def _load_config(config_path, seed, workers, out) -> RunConfig:
    try:
        config = load_config(config_path)
    except (OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if workers is not None:
        updates["workers"] = workers
    if out is not None:
        updates["output_dir"] = str(out)
    if updates:
        config = config.model_copy(update=updates)
        if "seed" in updates and config.data.synth is not None:
            config.data.synth.seed = updates["seed"]
    return config


server_option = click.option("--server", default=None, help="Remote service URL (default: run in-process).")
config_option = click.option("--config", "config_path", required=True, type=click.Path(exists=True))
seed_option = click.option("--seed", type=int, default=None, help="Override the config seed.")


@click.group()
def main():
    """Volatility forecasting schemes and rank-correlation backtests."""


@main.command()
@config_option
@click.option("--out", required=True, type=click.Path(), help="Directory for the generated CSVs.")
@seed_option
@server_option
def synth(config_path, out, seed, server):
    """Generate a synthetic universe (returns/loadings/mcaps CSVs)."""
    config = _load_config(config_path, seed, None, None)
    if config.data.synth is None:
        click.echo("error: config has no data.synth section", err=True)
        sys.exit(2)
    body = _post(server, "/synth", {"config": config.data.synth.model_dump(), "out_dir": str(out)})
    click.echo(json.dumps(body, indent=2, sort_keys=True))


@main.command()
@config_option
@click.option("--out", default=None, type=click.Path(), help="Override the config output_dir.")
@seed_option
@click.option("--workers", type=int, default=None, help="Override the config worker count.")
@click.option("--plot-data", is_flag=True, default=False, help="Also emit per-period tau series CSVs.")
@server_option
def backtest(config_path, out, seed, workers, plot_data, server):
    """Run the rolling backtest and write the report files."""
    config = _load_config(config_path, seed, workers, out)
    if plot_data:
        config = config.model_copy(update={"plot_data": True})
    body = _post(server, "/backtest", {"config": config.model_dump()})
    click.echo(json.dumps(body, indent=2, sort_keys=True))


@main.command()
@config_option
@click.option("--portfolio-id", required=True, help="Family id, or company:<id> for a single company.")
@click.option("--period", required=True, help="Test period start month, YYYY-MM.")
@click.option("--approach", type=click.Choice(["direct", "factor"]), default="direct")
@click.option("--model", "variance_model", type=click.Choice(["naive", "garch"]), default="naive")
@click.option("--q", type=int, default=1, help="Estimation window in months.")
@seed_option
@server_option
def estimate(config_path, portfolio_id, period, approach, variance_model, q, seed, server):
    """Print one volatility estimate for one portfolio and period."""
    config = _load_config(config_path, seed, None, None)
    body = _post(
        server,
        "/estimate",
        {
            "config": config.model_dump(),
            "portfolio_id": portfolio_id,
            "period": period,
            "approach": approach,
            "variance_model": variance_model,
            "q": q,
        },
    )
    click.echo(json.dumps(body, indent=2, sort_keys=True))


@main.command()
@click.argument("data_dir", type=click.Path(exists=True, file_okay=False))
@server_option
def validate(data_dir, server):
    """Check a data directory against the CSV schemas and invariants."""
    body = _post(server, "/validate", {"data_dir": str(data_dir)})
    click.echo(json.dumps(body, indent=2, sort_keys=True))
    if not body["ok"]:
        sys.exit(1)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the service under uvicorn."""
    import uvicorn

    uvicorn.run("volcast.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
