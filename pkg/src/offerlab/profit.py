"""Next-offer profit evaluation and the per-segment pricing program.

The decision variables are a continuous discount rate r (bounded per
segment) and a discrete contract length in months.  The objective sums,
over the segment's customers, acceptance probability x loyalty x (present
value of the contract margin - initial cost).  Contract months map to the
model's contract-year attribute as months / 12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .choice import logistic
from .errors import ConfigurationError, InvalidInputError
from .hb import DRAW_AVERAGED, POSTERIOR_MEAN, PosteriorDraws
from .segments import SEGMENTS

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_INVPHI_SQ = (3.0 - math.sqrt(5.0)) / 2.0

# the choice model was trained on discounts in this band; the objective
# refuses to extrapolate outside it
TRAINED_DISCOUNT_BAND = (-0.5, 0.5)

DEFAULT_CONTRACT_OPTIONS = (1, 12, 24, 36, 60)


def contract_months_to_years(months: float) -> float:
    """Contract attribute seen by the choice model (1 month -> 1/12 year)."""
    return months / 12.0


@dataclass(frozen=True)
class NopConfig:
    """Economic constants, per-segment discount bounds, contract options."""

    annual_rate: float = 0.12  # rate-of-return d used to discount cash flows
    monthly_cost: float = 5.0  # recurring cost to serve, per customer-month
    initial_cost: float = 0.0
    default_mrp: float = 100.0  # undiscounted monthly recurring price
    r_bounds: dict = field(default_factory=lambda: {s: (-0.5, 0.5) for s in SEGMENTS})
    contract_options: tuple = DEFAULT_CONTRACT_OPTIONS

    def validate(self) -> "NopConfig":
        if self.annual_rate < 0:
            raise ConfigurationError("annual_rate must be >= 0")
        if not self.contract_options or min(self.contract_options) < 1:
            raise ConfigurationError("contract_options must be non-empty months >= 1")
        lo_band, hi_band = TRAINED_DISCOUNT_BAND
        for segment, (lo, hi) in self.r_bounds.items():
            if lo > hi:
                raise ConfigurationError(f"bounds for {segment} have lower > upper")
            if lo < lo_band or hi > hi_band:
                raise ConfigurationError(
                    f"bounds for {segment} leave the trained discount band {TRAINED_DISCOUNT_BAND}"
                )
        return self

    def bounds_for(self, segment: str):
        try:
            return self.r_bounds[segment]
        except KeyError:
            raise ConfigurationError(f"no discount bounds configured for segment {segment!r}")

    def to_dict(self) -> dict:
        return {
            "annual_rate": self.annual_rate,
            "monthly_cost": self.monthly_cost,
            "initial_cost": self.initial_cost,
            "default_mrp": self.default_mrp,
            "r_bounds": {k: list(v) for k, v in self.r_bounds.items()},
            "contract_options": list(self.contract_options),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NopConfig":
        kwargs = {}
        for key in ("annual_rate", "monthly_cost", "initial_cost", "default_mrp"):
            if key in d:
                kwargs[key] = float(d[key])
        if "r_bounds" in d:
            kwargs["r_bounds"] = {k: tuple(float(x) for x in v) for k, v in d["r_bounds"].items()}
        if "contract_options" in d:
            kwargs["contract_options"] = tuple(int(m) for m in d["contract_options"])
        return cls(**kwargs).validate()


@dataclass(frozen=True)
class OfferPolicy:
    """Chosen discount rate and contract months for one segment."""

    segment: str
    r: float
    months: int
    nop_value: float
    n_customers: int = 0
    degenerate: bool = False


@dataclass(frozen=True)
class SegmentData:
    """The customers an optimized policy will be offered to."""

    segment: str
    customer_ids: tuple
    loyalty: np.ndarray
    mrp: np.ndarray

    @property
    def n_customers(self) -> int:
        return len(self.customer_ids)


def segment_data_from_assignments(assignments, config: NopConfig, mrp: dict | None = None):
    """Group segment assignments into SegmentData, one per segment."""
    mrp = mrp or {}
    grouped = {segment: [] for segment in SEGMENTS}
    for a in assignments:
        grouped[a.segment].append(a)
    out = {}
    for segment, members in grouped.items():
        out[segment] = SegmentData(
            segment=segment,
            customer_ids=tuple(a.customer_id for a in members),
            loyalty=np.array([a.loyalty for a in members]),
            mrp=np.array([mrp.get(a.customer_id, config.default_mrp) for a in members]),
        )
    return out


def annuity_factor(months: int, annual_rate: float) -> float:
    """Sum of monthly discount factors 1 / (1 + d/12)^m for m = 1..months."""
    if months < 1:
        raise InvalidInputError(f"months must be >= 1, got {months}")
    if annual_rate < 0:
        raise InvalidInputError("annual_rate must be >= 0")
    if annual_rate == 0.0:
        return float(months)
    g = 1.0 + annual_rate / 12.0
    return float(np.sum(g ** -np.arange(1, months + 1, dtype=float)))


def present_value(mrp: float, mrc: float, r: float, months: int, annual_rate: float) -> float:
    """Present value of the contract's monthly margin mrp*(1+r) - mrc."""
    return (mrp * (1.0 + r) - mrc) * annuity_factor(months, annual_rate)


def nop(prob: float, loyalty: float, pv: float, initial_cost: float) -> float:
    """Next-offer profit of one customer-offer."""
    for name, v in (("prob", prob), ("loyalty", loyalty), ("pv", pv), ("initial_cost", initial_cost)):
        if not math.isfinite(v):
            raise InvalidInputError(f"{name} must be finite, got {v!r}")
    return prob * loyalty * (pv - initial_cost)


class _SegmentObjective:
    """Reusable evaluator: caches the segment's coefficient draws so a
    search can probe many (r, months) points cheaply."""

    def __init__(self, seg: SegmentData, draws: PosteriorDraws, config: NopConfig, mode: str):
        if draws.n_params != 3:
            raise InvalidInputError("the objective requires the 3-attribute offer model")
        config.validate()
        idx = [draws.index_of(cid) for cid in seg.customer_ids]
        if mode == POSTERIOR_MEAN:
            self.betas = draws.posterior_mean_matrix()[None, idx, :]
        else:
            self.betas = draws.betas[:, idx, :]
        self.seg = seg
        self.config = config

    def value(self, r: float, months: int) -> float:
        lo, hi = TRAINED_DISCOUNT_BAND
        if not lo <= r <= hi:
            raise InvalidInputError(f"discount rate {r!r} leaves the trained band [{lo}, {hi}]")
        if self.seg.n_customers == 0:
            return 0.0
        years = contract_months_to_years(months)
        u = self.betas[:, :, 0] + self.betas[:, :, 1] * years + self.betas[:, :, 2] * r
        probs = logistic(u).mean(axis=0)
        factor = annuity_factor(months, self.config.annual_rate)
        pv = (self.seg.mrp * (1.0 + r) - self.config.monthly_cost) * factor
        return float(np.sum(probs * self.seg.loyalty * (pv - self.config.initial_cost)))


def segment_objective(
    r: float,
    months: int,
    seg: SegmentData,
    draws: PosteriorDraws,
    config: NopConfig,
    mode: str = DRAW_AVERAGED,
) -> float:
    """Total next-offer profit of offering (r, months) to a segment."""
    return _SegmentObjective(seg, draws, config, mode).value(r, months)


def _golden_section_max(f, a: float, b: float, tol: float = 1e-5):
    """Golden-section maximization on [a, b]; returns the best probed point."""
    best_x, best_y = a, f(a)
    yb = f(b)
    if yb > best_y:
        best_x, best_y = b, yb
    h = b - a
    if h <= tol:
        return best_x, best_y
    n = int(math.ceil(math.log(tol / h) / math.log(_INVPHI)))
    c = a + _INVPHI_SQ * h
    d = a + _INVPHI * h
    yc, yd = f(c), f(d)
    for _ in range(n):
        if yc >= yd:
            b, d, yd = d, c, yc
            h *= _INVPHI
            c = a + _INVPHI_SQ * h
            yc = f(c)
        else:
            a, c, yc = c, d, yd
            h *= _INVPHI
            d = a + _INVPHI * h
            yd = f(d)
        x, y = (c, yc) if yc >= yd else (d, yd)
        if y > best_y:
            best_x, best_y = x, y
    return best_x, best_y


def _r_grid(lo: float, hi: float, n_points: int) -> np.ndarray:
    if lo == hi:
        return np.array([lo])
    return np.linspace(lo, hi, n_points)


def optimize_policy(
    seg: SegmentData,
    draws: PosteriorDraws,
    config: NopConfig,
    mode: str = DRAW_AVERAGED,
    coarse_points: int = 101,
    refine_tol: float = 1e-5,
) -> OfferPolicy:
    """Best (r, months) for a segment: 101-point coarse scan of r per
    contract option, then golden-section refinement around the best point.
    Ties across contract options go to the shorter contract."""
    if seg.n_customers == 0:
        raise InvalidInputError(f"segment {seg.segment!r} has no customers")
    config.validate()
    objective = _SegmentObjective(seg, draws, config, mode)
    lo, hi = config.bounds_for(seg.segment)
    best = None
    any_nonzero = False
    for months in sorted(config.contract_options):
        rs = _r_grid(lo, hi, coarse_points)
        values = np.array([objective.value(r, months) for r in rs])
        if np.any(values != 0.0):
            any_nonzero = True
        i = int(np.argmax(values))
        r_star, v_star = float(rs[i]), float(values[i])
        if len(rs) > 1:
            a = float(rs[max(i - 1, 0)])
            b = float(rs[min(i + 1, len(rs) - 1)])
            r_ref, v_ref = _golden_section_max(
                lambda r: objective.value(r, months), a, b, tol=refine_tol
            )
            if v_ref > v_star:
                r_star, v_star = float(r_ref), float(v_ref)
        if best is None or v_star > best.nop_value:
            best = OfferPolicy(
                segment=seg.segment,
                r=r_star,
                months=int(months),
                nop_value=v_star,
                n_customers=seg.n_customers,
            )
    if not any_nonzero:
        # nothing to optimize (e.g. zero loyalty everywhere): flag it
        return OfferPolicy(
            segment=seg.segment,
            r=hi,
            months=int(max(config.contract_options)),
            nop_value=0.0,
            n_customers=seg.n_customers,
            degenerate=True,
        )
    return best


def grid_oracle(
    seg: SegmentData,
    draws: PosteriorDraws,
    config: NopConfig,
    r_step: float = 0.001,
    mode: str = DRAW_AVERAGED,
) -> OfferPolicy:
    """Exhaustive argmax over the r grid x contract options (verification)."""
    if seg.n_customers == 0:
        raise InvalidInputError(f"segment {seg.segment!r} has no customers")
    config.validate()
    objective = _SegmentObjective(seg, draws, config, mode)
    lo, hi = config.bounds_for(seg.segment)
    n_steps = max(int(round((hi - lo) / r_step)), 0)
    best = None
    for months in sorted(config.contract_options):
        rs = _r_grid(lo, hi, n_steps + 1)
        values = np.array([objective.value(r, months) for r in rs])
        i = int(np.argmax(values))
        if best is None or values[i] > best.nop_value:
            best = OfferPolicy(
                segment=seg.segment,
                r=float(rs[i]),
                months=int(months),
                nop_value=float(values[i]),
                n_customers=seg.n_customers,
            )
    return best
