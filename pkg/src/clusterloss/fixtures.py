"""Paths to the packaged market-data fixtures (trade date 2006-10-02)."""
from __future__ import annotations

import datetime as dt
from importlib import resources

FIXTURE_VALUATION_DATE = dt.date(2006, 10, 2)


def fixture_path(name: str) -> str:
    """Filesystem path of a packaged data file."""
    path = resources.files("clusterloss").joinpath("data", name)
    return str(path)


def curve_path() -> str:
    return fixture_path("curve_eur_2006-10-02.csv")


def quotes_path(pool: str = "itraxx") -> str:
    return fixture_path(f"quotes_{pool}_2006-10-02.csv")


def schedule_path(model: str, pool: str = "itraxx") -> str:
    return fixture_path(f"schedule_{model}_{pool}.json")
