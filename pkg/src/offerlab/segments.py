"""Discount-elasticity computation and loyalty x elasticity segmentation.

Each customer's elasticity is an arc elasticity between the acceptance
probability at the offered discount and at an extra ten points of
discount, with relative price defined as 1 + discount.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .choice import OfferObservation
from .errors import DegenerateInputError, InvalidInputError
from .hb import DRAW_AVERAGED, PosteriorDraws, predict_probability

INELASTIC_NOT_LOYAL = "inelastic-not-loyal"
INELASTIC_LOYAL = "inelastic-loyal"
ELASTIC_NOT_LOYAL = "elastic-not-loyal"
ELASTIC_LOYAL = "elastic-loyal"
SEGMENTS = (INELASTIC_NOT_LOYAL, INELASTIC_LOYAL, ELASTIC_NOT_LOYAL, ELASTIC_LOYAL)

# shifted discounts may leave the recorded attribute range, but only this far
DISCOUNT_SAFETY_BAND = (-0.6, 0.6)
DEFAULT_DISCOUNT_SHIFT = 0.10


@dataclass(frozen=True)
class SegmentAssignment:
    customer_id: int
    elasticity: float
    loyalty: float
    segment: str


def arc_elasticity(p0: float, p1: float, price0: float, price1: float) -> float:
    """Midpoint elasticity of probability with respect to price."""
    if price0 == price1:
        raise DegenerateInputError("price0 == price1: arc elasticity undefined")
    if p0 + p1 <= 0:
        raise DegenerateInputError("probabilities sum to zero: arc elasticity undefined")
    if price0 + price1 <= 0:
        raise DegenerateInputError("prices sum to zero: arc elasticity undefined")
    prob_change = (p1 - p0) / ((p0 + p1) / 2.0)
    price_change = (price1 - price0) / ((price0 + price1) / 2.0)
    return prob_change / price_change


def customer_elasticity(
    draws: PosteriorDraws,
    test_offer: OfferObservation,
    delta: float = DEFAULT_DISCOUNT_SHIFT,
) -> float:
    """Arc elasticity from the offered discount to ``delta`` more discount.

    Probabilities are draw-averaged; relative prices are 1 + discount.
    """
    discount = test_offer.attributes.discount
    shifted = discount - delta
    lo, hi = DISCOUNT_SAFETY_BAND
    if not lo <= shifted <= hi:
        raise InvalidInputError(
            f"shifted discount {shifted!r} leaves the safety band [{lo}, {hi}]"
        )
    p0 = predict_probability(draws, test_offer, mode=DRAW_AVERAGED)
    shifted_offer = replace(
        test_offer, attributes=replace(test_offer.attributes, discount=shifted)
    )
    p1 = predict_probability(draws, shifted_offer, mode=DRAW_AVERAGED)
    return arc_elasticity(p0, p1, 1.0 + discount, 1.0 + shifted)


def assign_segment(elasticity: float, loyalty: float) -> str:
    """Elasticity >= -1 is inelastic; loyalty > 0.5 is loyal."""
    if not math.isfinite(elasticity):
        raise InvalidInputError(f"elasticity must be finite, got {elasticity!r}")
    if not 0.0 <= loyalty <= 1.0:
        raise InvalidInputError(f"loyalty must lie in [0, 1], got {loyalty!r}")
    elastic_part = "inelastic" if elasticity >= -1.0 else "elastic"
    loyal_part = "loyal" if loyalty > 0.5 else "not-loyal"
    return f"{elastic_part}-{loyal_part}"


def assign_segments(
    draws: PosteriorDraws,
    test_offers,
    profiles: dict,
    delta: float = DEFAULT_DISCOUNT_SHIFT,
):
    """SegmentAssignment per customer, from each customer's test offer."""
    assignments = []
    for offer in sorted(test_offers, key=lambda o: o.customer_id):
        profile = profiles.get(offer.customer_id)
        if profile is None:
            raise InvalidInputError(f"no profile for customer {offer.customer_id}")
        elasticity = customer_elasticity(draws, offer, delta=delta)
        assignments.append(
            SegmentAssignment(
                customer_id=offer.customer_id,
                elasticity=elasticity,
                loyalty=profile.loyalty,
                segment=assign_segment(elasticity, profile.loyalty),
            )
        )
    return assignments


def segment_distribution(assignments) -> dict:
    """Percent of customers per segment; the four shares sum to 100."""
    assignments = list(assignments)
    if not assignments:
        raise InvalidInputError("no assignments to summarize")
    counts = {segment: 0 for segment in SEGMENTS}
    for a in assignments:
        counts[a.segment] += 1
    n = len(assignments)
    return {segment: 100.0 * counts[segment] / n for segment in SEGMENTS}
