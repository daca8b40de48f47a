"""Shared fixtures: catalogs, small and desk-scale warehouse snapshots."""

import pytest

from insightenv.catalog import load_default_catalog
from insightenv.warehouse import (
    BaseRates,
    Scenario,
    TargetSelector,
    WarehouseConfig,
    default_config,
    generate,
)


@pytest.fixture(scope="session")
def catalog():
    return load_default_catalog()


def small_warehouse_config(**overrides) -> WarehouseConfig:
    base = dict(
        seed=7,
        n_shops=6,
        n_users=400,
        n_brands=3,
        n_days=16,
        start_ds="20251001",
        base_rates=BaseRates(orders_per_shop_day=14.0, visitors_per_shop_day=35.0),
        scenarios=(
            Scenario(
                scenario_id="drop1",
                effect="gmv_drop",
                target=TargetSelector("shop", "S0002"),
                window=("20251009", "20251014"),
                magnitude=0.3,
                cause_label="channel mix shift",
            ),
        ),
    )
    base.update(overrides)
    return WarehouseConfig(**base)


@pytest.fixture(scope="session")
def small_warehouse(tmp_path_factory):
    d = tmp_path_factory.mktemp("small_wh")
    handle, _ = generate(small_warehouse_config(), d / "wh.sqlite")
    return handle


@pytest.fixture(scope="session")
def desk_warehouse(tmp_path_factory):
    """Default configuration at full desk scale; built once per session."""
    d = tmp_path_factory.mktemp("desk_wh")
    handle, _ = generate(default_config(), d / "wh.sqlite")
    return handle
