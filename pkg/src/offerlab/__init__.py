"""offerlab: fabricate offer-response data, fit a hierarchical Bayes mixed
logit with customer-level coefficients, evaluate predictive accuracy,
segment customers by discount elasticity and loyalty, and optimize
next-offer profit per segment."""

__version__ = "0.1.0"

from .choice import (
    CoefficientVector,
    CustomerProfile,
    OfferAttributes,
    OfferObservation,
    accept_probability,
    choice_probabilities,
    utility,
    willingness_to_pay,
)
from .evaluate import ScoredLabels, accuracy_at_base_rate, auc, delong_test, lift_curve, tune_ncomp
from .hb import (
    McmcConfig,
    MixtureModel,
    PosteriorDraws,
    fit_hb_mixed_logit,
    posterior_mean_betas,
    predict_probability,
)
from .profit import NopConfig, OfferPolicy, grid_oracle, nop, optimize_policy, present_value, segment_objective
from .segments import arc_elasticity, assign_segment, customer_elasticity, segment_distribution
from .simulate import (
    GroundTruthConfig,
    SimulatedDataset,
    draw_true_coefficients,
    generate_offers,
    simulate_dataset,
    simulate_responses,
    summarize_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
