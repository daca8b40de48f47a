"""Deterministic synthetic instant-retail warehouse.

Generates seven physical tables (dws_trd, dws_log, dim_usr, dim_shop,
dim_date, ads_shop, ads_brand) into a sqlite file, applies anomaly scenarios
multiplicatively inside their windows, and records machine-readable ground
truth about the planted causes. All randomness flows from config.seed through
a counter-based generator, so identical configs export identical bytes.
"""

from __future__ import annotations

import json
import sqlite3
from dataclasses import asdict, dataclass, field, replace
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np
import yaml

FORMAT_VERSION = "1"

TRD_MEASURES = [
    "net_gmv", "pay_amt", "discount_amt", "subsidy_amt", "refund_amt",
    "promo_gmv", "delivery_fee", "delivery_minutes", "order_cnt", "item_cnt",
    "cancel_cnt", "stockout_cnt", "review_cnt", "rating_sum", "coupon_cnt",
]
LOG_MEASURES = [
    "exposure_cnt", "click_cnt", "cart_cnt", "log_order_cnt",
    "fav_cnt", "share_cnt", "comment_cnt",
]

CHANNELS = ["app", "mini_program", "h5"]
PAYMENT_METHODS = ["wallet", "card", "cod"]
DELIVERY_TYPES = ["rider", "self_pickup", "third_party"]
PRICE_BANDS = ["low", "mid", "high"]
GENDERS = ["Female", "Male", "Unknown"]
AGE_GROUPS = ["18-24", "25-34", "35-44", "45-54", "55+"]
MEMBER_LEVELS = ["Bronze", "Silver", "Gold", "Platinum"]
CATEGORIES = ["convenience", "grocery", "pharmacy", "flowers", "fresh_food", "liquor"]
CITIES = ["Lakeworth", "Marston", "Fairview", "Brookdale", "Kentvale", "Ashford"]
DISTRICTS = ["Downtown", "Harbor", "Northgate", "Old Town", "Riverside", "Uptown"]

_SHOP_ADJ = ["Sunrise", "Golden", "Lucky", "Evergreen", "Rapid", "Urban",
             "Cozy", "Prime", "Garden", "Summit", "Blue Door", "Corner"]
_SHOP_NOUN = ["Mart", "Market", "Express", "Depot", "Pantry", "Basket",
              "Grocer", "Shelf", "Supply", "Stop"]
_BRAND_NAMES = ["FreshHub", "QuickBasket", "DailyCart", "MetroMart", "PrimePantry",
                "RushGrocer", "HarborFoods", "GreenCrate", "SwiftShelf", "NovaRetail",
                "TownSquare", "PeakSupply", "BlueRiver", "SunGrove", "RapidRoots"]

# Fixed-date holidays inside any generated year.
_HOLIDAYS = {(1, 1), (5, 1), (10, 1), (10, 2), (10, 3), (10, 4), (10, 5), (10, 6), (10, 7), (12, 25)}


class WarehouseConfigError(ValueError):
    """Config failed validation or a scenario is infeasible."""


class UnknownScenarioError(KeyError):
    """ground_truth was asked for a scenario id that was never planted."""


def q25(x: np.ndarray) -> np.ndarray:
    """Snap values to the 0.25 grid so aggregate sums stay clean."""
    return np.round(np.asarray(x, dtype=np.float64) * 4.0) / 4.0


@dataclass(frozen=True)
class BaseRates:
    orders_per_shop_day: float = 55.0
    visitors_per_shop_day: float = 175.0
    items_mean: float = 1.2
    exposures_mean: float = 5.5
    click_rate: float = 0.18
    cart_rate: float = 0.32
    order_rate: float = 0.50
    refund_rate: float = 0.06
    promo_rate: float = 0.25
    review_rate: float = 0.30
    coupon_rate: float = 0.22
    cancel_rate: float = 0.035
    stockout_rate: float = 0.012
    weekend_boost: float = 1.25
    holiday_boost: float = 1.35


@dataclass(frozen=True)
class TargetSelector:
    """Which entity a scenario hits: a shop, a brand, or a district."""

    kind: str  # "shop" | "brand" | "district"
    value: str


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    effect: str  # see EFFECTS
    target: TargetSelector
    window: tuple[str, str]  # inclusive ds range
    magnitude: float  # fraction in (0, 1]
    cause_label: str = ""


@dataclass(frozen=True)
class PlantedCause:
    metric: str
    dimension: str
    segment: str
    direction: str  # "down" | "up"
    share_of_effect: float


@dataclass(frozen=True)
class GroundTruth:
    scenario_id: str
    planted_causes: tuple[PlantedCause, ...]


@dataclass(frozen=True)
class WarehouseConfig:
    seed: int = 42
    n_shops: int = 60
    n_users: int = 5000
    n_brands: int = 12
    n_days: int = 28
    start_ds: str = "20251001"
    base_rates: BaseRates = field(default_factory=BaseRates)
    scenarios: tuple[Scenario, ...] = ()

    def validate(self) -> None:
        for name in ("n_shops", "n_users", "n_brands", "n_days"):
            if getattr(self, name) < 1:
                raise WarehouseConfigError(f"{name} must be >= 1")
        if self.n_days < 14:
            raise WarehouseConfigError("n_days must be >= 14 for week-over-week windows")
        if self.n_brands > self.n_shops:
            raise WarehouseConfigError("n_brands must not exceed n_shops")
        try:
            datetime.strptime(self.start_ds, "%Y%m%d")
        except ValueError as exc:
            raise WarehouseConfigError(f"start_ds {self.start_ds!r} is not YYYYMMDD") from exc
        days = set(self.ds_range())
        for scn in self.scenarios:
            if scn.effect not in EFFECTS:
                raise WarehouseConfigError(f"unknown scenario effect {scn.effect!r}")
            if not (0.0 < scn.magnitude <= 1.0):
                raise WarehouseConfigError(
                    f"scenario {scn.scenario_id!r}: magnitude must be in (0, 1]")
            if scn.target.kind not in ("shop", "brand", "district"):
                raise WarehouseConfigError(
                    f"scenario {scn.scenario_id!r}: unknown target kind {scn.target.kind!r}")
            lo, hi = scn.window
            if lo > hi or lo not in days or hi not in days:
                raise WarehouseConfigError(
                    f"scenario {scn.scenario_id!r}: window {scn.window} outside generated range")
        ids = [s.scenario_id for s in self.scenarios]
        if len(set(ids)) != len(ids):
            raise WarehouseConfigError("duplicate scenario_id")

    def ds_range(self) -> list[str]:
        start = datetime.strptime(self.start_ds, "%Y%m%d").date()
        return [(start + timedelta(days=i)).strftime("%Y%m%d") for i in range(self.n_days)]


@dataclass(frozen=True)
class EffectSpec:
    metric: str
    table: str
    column: str
    cause_dimension: str
    direction: str
    scale_funnel: bool = False  # scale all log measures together
    recompute_pay: bool = False  # keep pay_amt = net_gmv + delivery_fee


EFFECTS: dict[str, EffectSpec] = {
    "gmv_drop": EffectSpec("netGMV", "dws_trd", "net_gmv", "channel", "down", recompute_pay=True),
    "traffic_drop": EffectSpec("exposureCnt", "dws_log", "exposure_cnt", "ageGroup", "down", scale_funnel=True),
    "conversion_drop": EffectSpec("logOrderCnt", "dws_log", "log_order_cnt", "memberLevel", "down"),
    "price_shift": EffectSpec("netGMV", "dws_trd", "net_gmv", "priceBand", "up", recompute_pay=True),
    "logistics_delay": EffectSpec("deliveryMinutes", "dws_trd", "delivery_minutes", "deliveryType", "up"),
}

# Effect shares planted over the top segments, largest first. The head always
# carries at least half so a Pareto-style "dominant cause" exists by design.
_SHARE_LADDERS = {1: (1.0,), 2: (0.7, 0.3), 3: (0.6, 0.25, 0.15)}


def _categorical(rng, values, probs, size):
    idx = rng.choice(len(values), size=size, p=probs)
    return np.array(values, dtype=object)[idx], idx


class _Frames:
    """Columnar intermediate state between generation and persistence."""

    def __init__(self):
        self.dim_shop: dict[str, np.ndarray] = {}
        self.dim_usr: dict[str, np.ndarray] = {}
        self.dim_date: dict[str, list] = {}
        self.trd: dict[str, np.ndarray] = {}
        self.log: dict[str, np.ndarray] = {}


def _gen_dimensions(cfg: WarehouseConfig, rng) -> _Frames:
    f = _Frames()
    n_shops, n_users = cfg.n_shops, cfg.n_users

    shop_ids = np.array([f"S{i + 1:04d}" for i in range(n_shops)], dtype=object)
    adj = rng.choice(len(_SHOP_ADJ), size=n_shops)
    noun = rng.choice(len(_SHOP_NOUN), size=n_shops)
    names = []
    seen: dict[str, int] = {}
    for i in range(n_shops):
        base = f"{_SHOP_ADJ[adj[i]]} {_SHOP_NOUN[noun[i]]}"
        seen[base] = seen.get(base, 0) + 1
        names.append(base if seen[base] == 1 else f"{base} {seen[base]}")
    brand_idx = np.arange(n_shops) % cfg.n_brands
    brand_ids = np.array([f"B{i + 1:02d}" for i in brand_idx], dtype=object)
    brand_names = np.array(
        [_BRAND_NAMES[i % len(_BRAND_NAMES)] for i in brand_idx], dtype=object)
    _, cat_idx = _categorical(rng, CATEGORIES, [0.3, 0.25, 0.12, 0.08, 0.15, 0.1], n_shops)
    district_idx = rng.choice(len(DISTRICTS), size=n_shops)
    city_idx = rng.choice(len(CITIES), size=n_shops)
    open_offset = rng.integers(200, 1500, size=n_shops)
    start = datetime.strptime(cfg.start_ds, "%Y%m%d").date()
    f.dim_shop = {
        "shop_id": shop_ids,
        "shop_name": np.array(names, dtype=object),
        "brand_id": brand_ids,
        "brand_name": brand_names,
        "category": np.array(CATEGORIES, dtype=object)[cat_idx],
        "district": np.array(DISTRICTS, dtype=object)[district_idx],
        "city": np.array(CITIES, dtype=object)[city_idx],
        "open_ds": np.array(
            [(start - timedelta(days=int(d))).strftime("%Y%m%d") for d in open_offset],
            dtype=object),
    }

    user_ids = np.array([f"U{i + 1:06d}" for i in range(n_users)], dtype=object)
    gender, _ = _categorical(rng, GENDERS, [0.52, 0.44, 0.04], n_users)
    age, _ = _categorical(rng, AGE_GROUPS, [0.18, 0.34, 0.22, 0.16, 0.10], n_users)
    member, _ = _categorical(rng, MEMBER_LEVELS, [0.45, 0.27, 0.18, 0.10], n_users)
    ucity_idx = rng.choice(len(CITIES), size=n_users)
    f.dim_usr = {
        "user_id": user_ids,
        "gender": gender,
        "age_group": age,
        "member_level": member,
        "user_city": np.array(CITIES, dtype=object)[ucity_idx],
    }

    ds_list = cfg.ds_range()
    dates = [datetime.strptime(d, "%Y%m%d").date() for d in ds_list]
    f.dim_date = {
        "ds": ds_list,
        "stat_date": [d.isoformat() for d in dates],
        "is_week": ["Weekend" if d.weekday() >= 5 else "Weekday" for d in dates],
        "is_holiday": ["Holiday" if (d.month, d.day) in _HOLIDAYS else "Non-Holiday" for d in dates],
        "month": [d.strftime("%Y%m") for d in dates],
        "week_of_year": [f"{d.isocalendar()[0]}W{d.isocalendar()[1]:02d}" for d in dates],
        "day_of_week": [d.strftime("%a") for d in dates],
    }
    return f


def _day_factors(f: _Frames, rates: BaseRates) -> np.ndarray:
    out = np.ones(len(f.dim_date["ds"]))
    for i in range(len(out)):
        if f.dim_date["is_week"][i] == "Weekend":
            out[i] *= rates.weekend_boost
        if f.dim_date["is_holiday"][i] == "Holiday":
            out[i] *= rates.holiday_boost
    return out


def _gen_trd(cfg: WarehouseConfig, rng, f: _Frames) -> None:
    rates = cfg.base_rates
    n_shops, n_days = cfg.n_shops, cfg.n_days
    shop_size = rng.gamma(shape=4.0, scale=0.25, size=n_shops)
    day_factor = _day_factors(f, rates)
    lam = rates.orders_per_shop_day * np.outer(shop_size, day_factor)
    counts = rng.poisson(lam)  # (shop, day)
    shop_idx = np.repeat(np.arange(n_shops), counts.sum(axis=1))
    day_idx = np.concatenate([np.repeat(np.arange(n_days), counts[s]) for s in range(n_shops)])
    n = len(shop_idx)

    user_weight = rng.gamma(shape=2.0, scale=1.0, size=cfg.n_users)
    user_weight /= user_weight.sum()
    user_idx = rng.choice(cfg.n_users, size=n, p=user_weight)

    _, channel_i = _categorical(rng, CHANNELS, [0.60, 0.25, 0.15], n)
    _, payment_i = _categorical(rng, PAYMENT_METHODS, [0.55, 0.35, 0.10], n)
    _, delivery_i = _categorical(rng, DELIVERY_TYPES, [0.62, 0.18, 0.20], n)
    _, band_i = _categorical(rng, PRICE_BANDS, [0.35, 0.45, 0.20], n)

    item_cnt = 1 + rng.poisson(rates.items_mean - 1.0 if rates.items_mean > 1 else 0.2, size=n)
    price_lo = np.array([8.0, 25.0, 70.0])[band_i]
    price_hi = np.array([25.0, 70.0, 180.0])[band_i]
    unit_price = q25(rng.uniform(price_lo, price_hi))
    gross = unit_price * item_cnt
    has_discount = rng.random(n) < 0.5
    discount_amt = q25(gross * rng.uniform(0.0, 0.18, size=n) * has_discount)
    net_gmv = gross - discount_amt
    fee_by_type = {0: [3.0, 5.0, 7.0], 2: [5.0, 8.0]}
    delivery_fee = np.zeros(n)
    for t, choices in fee_by_type.items():
        mask = delivery_i == t
        delivery_fee[mask] = rng.choice(choices, size=int(mask.sum()))
    pay_amt = net_gmv + delivery_fee
    refunded = rng.random(n) < rates.refund_rate
    refund_amt = np.minimum(q25(net_gmv * rng.uniform(0.2, 1.0, size=n)), net_gmv) * refunded
    promo = rng.random(n) < rates.promo_rate
    promo_gmv = net_gmv * promo
    subsidy_amt = q25(net_gmv * rng.uniform(0.0, 0.08, size=n)) * promo
    minutes_mean = np.array([32.0, 0.0, 48.0])[delivery_i]
    minutes_sd = np.array([8.0, 1.0, 12.0])[delivery_i]
    delivery_minutes = q25(np.clip(rng.normal(minutes_mean, minutes_sd), 0.0, 150.0))
    delivery_minutes[delivery_i == 1] = 0.0
    review_cnt = (rng.random(n) < rates.review_rate).astype(np.float64)
    rating_sum = review_cnt * rng.integers(1, 6, size=n)
    cancel_cnt = (rng.random(n) < rates.cancel_rate).astype(np.float64)
    stockout_cnt = (rng.random(n) < rates.stockout_rate).astype(np.float64)
    coupon_cnt = (rng.random(n) < rates.coupon_rate).astype(np.float64)

    ds_arr = np.array(f.dim_date["ds"], dtype=object)
    f.trd = {
        "ds": ds_arr[day_idx],
        "order_id": np.array([f"T{i + 1:08d}" for i in range(n)], dtype=object),
        "shop_id": f.dim_shop["shop_id"][shop_idx],
        "user_id": f.dim_usr["user_id"][user_idx],
        "channel": np.array(CHANNELS, dtype=object)[channel_i],
        "payment_method": np.array(PAYMENT_METHODS, dtype=object)[payment_i],
        "delivery_type": np.array(DELIVERY_TYPES, dtype=object)[delivery_i],
        "price_band": np.array(PRICE_BANDS, dtype=object)[band_i],
        "net_gmv": net_gmv.astype(np.float64),
        "pay_amt": pay_amt.astype(np.float64),
        "discount_amt": discount_amt.astype(np.float64),
        "subsidy_amt": subsidy_amt.astype(np.float64),
        "refund_amt": refund_amt.astype(np.float64),
        "promo_gmv": promo_gmv.astype(np.float64),
        "delivery_fee": delivery_fee.astype(np.float64),
        "delivery_minutes": delivery_minutes.astype(np.float64),
        "order_cnt": np.ones(n),
        "item_cnt": item_cnt.astype(np.float64),
        "cancel_cnt": cancel_cnt,
        "stockout_cnt": stockout_cnt,
        "review_cnt": review_cnt,
        "rating_sum": rating_sum.astype(np.float64),
        "coupon_cnt": coupon_cnt,
        # Bookkeeping for scenario targeting, not persisted.
        "_shop_idx": shop_idx,
        "_user_idx": user_idx,
    }


def _gen_log(cfg: WarehouseConfig, rng, f: _Frames) -> None:
    rates = cfg.base_rates
    n_shops, n_days = cfg.n_shops, cfg.n_days
    shop_reach = rng.gamma(shape=4.0, scale=0.25, size=n_shops)
    shop_quality = np.clip(rng.uniform(0.7, 1.3, size=n_shops), 0.0, None)
    day_factor = _day_factors(f, rates)
    lam = rates.visitors_per_shop_day * np.outer(shop_reach, day_factor)
    counts = rng.poisson(lam)
    shop_idx = np.repeat(np.arange(n_shops), counts.sum(axis=1))
    day_idx = np.concatenate([np.repeat(np.arange(n_days), counts[s]) for s in range(n_shops)])
    n = len(shop_idx)

    user_weight = rng.gamma(shape=2.0, scale=1.0, size=cfg.n_users)
    user_weight /= user_weight.sum()
    user_idx = rng.choice(cfg.n_users, size=n, p=user_weight)

    exposure = 1 + rng.poisson(rates.exposures_mean, size=n)
    p_click = np.clip(rates.click_rate * shop_quality[shop_idx], 0.01, 0.9)
    click = rng.binomial(exposure, p_click)
    cart = rng.binomial(click, rates.cart_rate)
    log_order = rng.binomial(cart, rates.order_rate)
    fav = rng.binomial(click, 0.06)
    share = rng.binomial(click, 0.03)
    comment = rng.binomial(click, 0.02)

    ds_arr = np.array(f.dim_date["ds"], dtype=object)
    f.log = {
        "ds": ds_arr[day_idx],
        "shop_id": f.dim_shop["shop_id"][shop_idx],
        "user_id": f.dim_usr["user_id"][user_idx],
        "exposure_cnt": exposure.astype(np.float64),
        "click_cnt": click.astype(np.float64),
        "cart_cnt": cart.astype(np.float64),
        "log_order_cnt": log_order.astype(np.float64),
        "fav_cnt": fav.astype(np.float64),
        "share_cnt": share.astype(np.float64),
        "comment_cnt": comment.astype(np.float64),
        "_shop_idx": shop_idx,
        "_user_idx": user_idx,
    }


def _target_shop_mask(f: _Frames, table: dict, target: TargetSelector) -> np.ndarray:
    shop_idx = table["_shop_idx"]
    if target.kind == "shop":
        sel = f.dim_shop["shop_id"] == target.value
    elif target.kind == "brand":
        sel = f.dim_shop["brand_id"] == target.value
    else:
        sel = f.dim_shop["district"] == target.value
    if not sel.any():
        raise WarehouseConfigError(f"scenario target {target.kind}={target.value!r} matches nothing")
    return sel[shop_idx]


def _segment_values(f: _Frames, table: dict, dimension: str) -> np.ndarray:
    if dimension == "channel":
        return table["channel"]
    if dimension == "priceBand":
        return table["price_band"]
    if dimension == "deliveryType":
        return table["delivery_type"]
    if dimension == "ageGroup":
        return f.dim_usr["age_group"][table["_user_idx"]]
    if dimension == "memberLevel":
        return f.dim_usr["member_level"][table["_user_idx"]]
    raise WarehouseConfigError(f"no segment accessor for dimension {dimension!r}")


def _apply_scenario(cfg: WarehouseConfig, f: _Frames, scn: Scenario) -> GroundTruth:
    spec = EFFECTS[scn.effect]
    table = f.trd if spec.table == "dws_trd" else f.log
    ds = table["ds"].astype(str)
    lo, hi = scn.window
    window_mask = (ds >= lo) & (ds <= hi)
    rows = window_mask & _target_shop_mask(f, table, scn.target)
    col = table[spec.column]
    total = float(col[rows].sum())
    if total <= 0.0:
        raise WarehouseConfigError(
            f"scenario {scn.scenario_id!r}: no {spec.column} mass in the target window")

    seg_values = _segment_values(f, table, spec.cause_dimension)
    masses: dict[str, float] = {}
    for seg in np.unique(seg_values[rows]):
        mass = float(col[rows & (seg_values == seg)].sum())
        if mass > 0.0:
            masses[str(seg)] = mass
    top = sorted(masses.items(), key=lambda kv: (-kv[1], kv[0]))[:3]
    shares = _SHARE_LADDERS[len(top)]

    causes = []
    sign = -1.0 if spec.direction == "down" else 1.0
    for (seg, mass), share in zip(top, shares):
        delta = share * scn.magnitude * total
        factor = 1.0 + sign * delta / mass
        if factor < 0.02:
            raise WarehouseConfigError(
                f"scenario {scn.scenario_id!r}: magnitude {scn.magnitude} removes more "
                f"{spec.column} than segment {seg!r} holds")
        seg_rows = rows & (seg_values == seg)
        if spec.scale_funnel:
            for name in LOG_MEASURES:
                table[name][seg_rows] *= factor
        else:
            col[seg_rows] *= factor
        if spec.recompute_pay:
            table["pay_amt"][seg_rows] = table["net_gmv"][seg_rows] + table["delivery_fee"][seg_rows]
        causes.append(PlantedCause(
            metric=spec.metric,
            dimension=spec.cause_dimension,
            segment=seg,
            direction=spec.direction,
            share_of_effect=share,
        ))
    return GroundTruth(scenario_id=scn.scenario_id, planted_causes=tuple(causes))


# -- persistence --------------------------------------------------------------

_SCHEMAS = {
    "dws_trd": ["ds", "order_id", "shop_id", "user_id", "channel", "payment_method",
                "delivery_type", "price_band"] + TRD_MEASURES,
    "dws_log": ["ds", "shop_id", "user_id"] + LOG_MEASURES,
    "dim_usr": ["user_id", "gender", "age_group", "member_level", "user_city"],
    "dim_shop": ["shop_id", "shop_name", "brand_id", "brand_name", "category",
                 "district", "city", "open_ds"],
    "dim_date": ["ds", "stat_date", "is_week", "is_holiday", "month", "week_of_year", "day_of_week"],
    "ads_shop": ["ds", "shop_id"] + TRD_MEASURES + LOG_MEASURES,
    "ads_brand": ["ds", "brand_id"] + TRD_MEASURES + LOG_MEASURES,
}

_TEXT_COLUMNS = {
    "ds", "order_id", "shop_id", "user_id", "channel", "payment_method",
    "delivery_type", "price_band", "gender", "age_group", "member_level",
    "user_city", "shop_name", "brand_id", "brand_name", "category", "district",
    "city", "open_ds", "stat_date", "is_week", "is_holiday", "month",
    "week_of_year", "day_of_week",
}


def _create_tables(conn: sqlite3.Connection) -> None:
    for name, cols in _SCHEMAS.items():
        decls = ", ".join(
            f"{c} TEXT" if c in _TEXT_COLUMNS else f"{c} REAL" for c in cols)
        conn.execute(f"CREATE TABLE {name} ({decls})")
    conn.execute("CREATE TABLE _meta (key TEXT PRIMARY KEY, value TEXT)")


def _insert(conn: sqlite3.Connection, name: str, columns: dict) -> None:
    cols = _SCHEMAS[name]
    data = [columns[c].tolist() if isinstance(columns[c], np.ndarray) else list(columns[c])
            for c in cols]
    rows = list(zip(*data))
    placeholders = ", ".join("?" for _ in cols)
    conn.executemany(f"INSERT INTO {name} VALUES ({placeholders})", rows)


def _build_ads(conn: sqlite3.Connection) -> None:
    trd_sums = ", ".join(f"SUM({c}) AS {c}" for c in TRD_MEASURES)
    log_sums = ", ".join(f"SUM({c}) AS {c}" for c in LOG_MEASURES)
    trd_cols = ", ".join(f"COALESCE(t.{c}, 0.0)" for c in TRD_MEASURES)
    log_cols = ", ".join(f"COALESCE(l.{c}, 0.0)" for c in LOG_MEASURES)
    conn.execute(f"""
        INSERT INTO ads_shop
        SELECT k.ds, k.shop_id, {trd_cols}, {log_cols}
        FROM (SELECT ds, shop_id FROM dws_trd UNION SELECT ds, shop_id FROM dws_log) k
        LEFT JOIN (SELECT ds, shop_id, {trd_sums} FROM dws_trd GROUP BY ds, shop_id) t
            ON t.ds = k.ds AND t.shop_id = k.shop_id
        LEFT JOIN (SELECT ds, shop_id, {log_sums} FROM dws_log GROUP BY ds, shop_id) l
            ON l.ds = k.ds AND l.shop_id = k.shop_id
        ORDER BY k.ds, k.shop_id
    """)
    conn.execute(f"""
        INSERT INTO ads_brand
        SELECT ds, brand_id, {trd_sums}, {log_sums}
        FROM (
            SELECT a.*, s.brand_id
            FROM ads_shop a JOIN dim_shop s ON a.shop_id = s.shop_id
        )
        GROUP BY ds, brand_id
        ORDER BY ds, brand_id
    """)


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_to_dict(cfg: WarehouseConfig) -> dict:
    d = asdict(cfg)
    d["scenarios"] = [
        {**asdict(s), "target": asdict(s.target), "window": list(s.window)}
        for s in cfg.scenarios
    ]
    return d


def config_from_dict(doc: dict) -> WarehouseConfig:
    doc = dict(doc or {})
    rates = doc.pop("base_rates", {}) or {}
    unknown = set(rates) - {f.name for f in BaseRates.__dataclass_fields__.values()}
    if unknown:
        raise WarehouseConfigError(f"unknown base_rates keys: {sorted(unknown)}")
    scenarios = []
    for s in doc.pop("scenarios", []) or []:
        target = s.get("target") or {}
        try:
            scenarios.append(Scenario(
                scenario_id=s["scenario_id"],
                effect=s["effect"],
                target=TargetSelector(kind=target["kind"], value=str(target["value"])),
                window=(str(s["window"][0]), str(s["window"][1])),
                magnitude=float(s["magnitude"]),
                cause_label=s.get("cause_label", ""),
            ))
        except (KeyError, IndexError, TypeError) as exc:
            raise WarehouseConfigError(f"malformed scenario entry {s!r}") from exc
    known = {f.name for f in WarehouseConfig.__dataclass_fields__.values()}
    unknown = set(doc) - known
    if unknown:
        raise WarehouseConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = WarehouseConfig(
        base_rates=BaseRates(**rates),
        scenarios=tuple(scenarios),
        **{k: v for k, v in doc.items() if k not in ("base_rates", "scenarios")},
    )
    cfg.validate()
    return cfg


def load_warehouse_config(path: str | Path) -> WarehouseConfig:
    """Read a YAML config file mirroring WarehouseConfig."""
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise WarehouseConfigError(f"{path}: config root must be a mapping")
    return config_from_dict(doc)


class WarehouseHandle:
    """Read access to a generated store plus its planted ground truth."""

    def __init__(self, path: Path, config: WarehouseConfig, ground_truths: list[GroundTruth]):
        self.path = Path(path)
        self.config = config
        self.ground_truths = list(ground_truths)
        self._by_id = {gt.scenario_id: gt for gt in self.ground_truths}

    def connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(f"file:{self.path}?mode=ro", uri=True)
        conn.row_factory = sqlite3.Row
        return conn

    def ground_truth(self, scenario_id: str) -> GroundTruth:
        try:
            return self._by_id[scenario_id]
        except KeyError:
            raise UnknownScenarioError(scenario_id) from None

    def tables(self) -> list[str]:
        return list(_SCHEMAS)

    def export_csv(self, table: str, dest: str | Path) -> Path:
        if table not in _SCHEMAS:
            raise KeyError(f"unknown table {table!r}")
        import csv

        dest = Path(dest)
        with self.connect() as conn, open(dest, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_SCHEMAS[table])
            for row in conn.execute(f"SELECT * FROM {table} ORDER BY rowid"):
                writer.writerow([_csv_cell(v) for v in row])
        return dest


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def generate(config: WarehouseConfig, path: str | Path) -> tuple[WarehouseHandle, list[GroundTruth]]:
    """Build the warehouse at `path` and return its handle and ground truth."""
    config.validate()
    path = Path(path)
    if path.exists():
        path.unlink()
    rng = np.random.Generator(np.random.Philox(config.seed))
    frames = _gen_dimensions(config, rng)
    _gen_trd(config, rng, frames)
    _gen_log(config, rng, frames)
    truths = [_apply_scenario(config, frames, scn) for scn in config.scenarios]

    conn = sqlite3.connect(path)
    try:
        conn.execute("PRAGMA journal_mode = OFF")
        conn.execute("PRAGMA synchronous = OFF")
        _create_tables(conn)
        _insert(conn, "dim_shop", frames.dim_shop)
        _insert(conn, "dim_usr", frames.dim_usr)
        _insert(conn, "dim_date", frames.dim_date)
        _insert(conn, "dws_trd", frames.trd)
        _insert(conn, "dws_log", frames.log)
        _build_ads(conn)
        meta = {
            "format_version": FORMAT_VERSION,
            "config": config_to_dict(config),
            "ground_truths": [
                {"scenario_id": gt.scenario_id,
                 "planted_causes": [asdict(c) for c in gt.planted_causes]}
                for gt in truths
            ],
        }
        conn.executemany("INSERT INTO _meta VALUES (?, ?)",
                         [(k, _dump_json(v)) for k, v in meta.items()])
        for name in _SCHEMAS:
            cols = _SCHEMAS[name]
            if "ds" in cols and "shop_id" in cols:
                conn.execute(f"CREATE INDEX idx_{name}_ds_shop ON {name} (ds, shop_id)")
        conn.commit()
    finally:
        conn.close()
    return WarehouseHandle(path, config, truths), truths


def open_warehouse(path: str | Path) -> WarehouseHandle:
    """Reopen a previously generated store from its embedded metadata."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    try:
        rows = dict(conn.execute("SELECT key, value FROM _meta"))
    finally:
        conn.close()
    config = config_from_dict(json.loads(rows["config"]))
    truths = [
        GroundTruth(
            scenario_id=g["scenario_id"],
            planted_causes=tuple(PlantedCause(**c) for c in g["planted_causes"]),
        )
        for g in json.loads(rows["ground_truths"])
    ]
    return WarehouseHandle(path, config, truths)


def default_config() -> WarehouseConfig:
    """Desk-scale config with two planted anomalies."""
    return WarehouseConfig(scenarios=(
        Scenario(
            scenario_id="scn_gmv_drop_s0001",
            effect="gmv_drop",
            target=TargetSelector("shop", "S0001"),
            window=("20251015", "20251021"),
            magnitude=0.30,
            cause_label="order volume collapse in the app channel",
        ),
        Scenario(
            scenario_id="scn_traffic_drop_b03",
            effect="traffic_drop",
            target=TargetSelector("brand", "B03"),
            window=("20251012", "20251018"),
            magnitude=0.35,
            cause_label="exposure loss concentrated in the 25-34 age group",
        ),
    ))
