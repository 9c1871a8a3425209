"""Fabricates ground-truth coefficients and synthetic offer datasets.

Customer tastes are drawn from a mixture of multivariate normals whose
means are shifted by a centered loyalty covariate; offers are drawn
uniformly over the attribute ranges, with the per-customer training offer
count following a configurable long-tailed distribution.  Responses are
independent Bernoulli draws at each offer's logit acceptance probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .choice import (
    ACCEPTED,
    REJECTED,
    CoefficientVector,
    CustomerProfile,
    OfferAttributes,
    OfferObservation,
    accept_probability,
)
from .errors import ConfigurationError, DataIntegrityError

# Independent sub-stream per purpose: relabeling responses, for example,
# never disturbs the offers already drawn, and because every customer is
# processed in id order with a self-contained block of draws, growing
# n_customers leaves earlier customers' draws untouched.
_STREAMS = {"coefficients": 0, "offers": 1, "responses": 2}


def purpose_rng(seed: int, purpose: str) -> np.random.Generator:
    """PCG64 generator keyed by (seed, purpose)."""
    code = _STREAMS[purpose]
    return np.random.default_rng(np.random.SeedSequence((seed & 0xFFFFFFFFFFFFFFFF, code)))


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: tuple  # length 3: (k, beta_contract, beta_discount)
    cov: tuple  # 3x3 nested tuples, symmetric positive semidefinite

    def mean_array(self) -> np.ndarray:
        return np.asarray(self.mean, dtype=float)

    def cov_array(self) -> np.ndarray:
        return np.asarray(self.cov, dtype=float)


def _diag(*v):
    n = len(v)
    return tuple(tuple(float(v[i]) if i == j else 0.0 for j in range(n)) for i in range(n))


# Default ground truth, shaped like a real B2B offer book: roughly 61%
# overall acceptance, a clearly bimodal intercept distribution (a large
# eager segment and a smaller reluctant one), negative-centered discount
# coefficients, and loyalty loading on both the intercept and the discount
# slope.  The component-level intercept and discount slope move together,
# so the population covariance carries real structure for the estimator to
# exploit.
def _cov3(var_k, var_yr, var_disc, corr_k_disc):
    cov = corr_k_disc * (var_k * var_disc) ** 0.5
    return (
        (var_k, 0.0, cov),
        (0.0, var_yr, 0.0),
        (cov, 0.0, var_disc),
    )


DEFAULT_MIXTURE = (
    MixtureComponent(0.45, (1.6, 0.35, -2.4), _cov3(0.35, 0.030, 0.50, 0.6)),
    MixtureComponent(0.35, (0.0, 0.20, -3.2), _cov3(0.30, 0.030, 0.50, 0.6)),
    MixtureComponent(0.20, (-3.5, 0.05, -5.2), _cov3(0.45, 0.020, 1.00, 0.6)),
)
DEFAULT_LOYALTY_LOADINGS = (2.2, 0.0, 6.0)

# Long-tailed offer-count distribution (share of customers by number of
# training offers); mean ~1.7 offers per customer.
DEFAULT_OFFER_COUNTS = (
    (1, 0.690),
    (2, 0.181),
    (3, 0.055),
    (4, 0.027),
    (5, 0.017),
    (6, 0.013),
    (7, 0.006),
    (8, 0.001),
    (9, 0.003),
    (10, 0.001),
    (12, 0.001),
    (14, 0.001),
    (15, 0.001),
    (17, 0.001),
    (24, 0.001),
    (48, 0.001),
)


@dataclass(frozen=True)
class GroundTruthConfig:
    """Everything needed to fabricate a dataset, including the seed."""

    n_customers: int = 1000
    mixture: tuple = DEFAULT_MIXTURE
    loyalty_loadings: tuple = DEFAULT_LOYALTY_LOADINGS
    offer_count_distribution: tuple = DEFAULT_OFFER_COUNTS
    discount_bounds: tuple = (-0.5, 0.5)
    contract_values: tuple = (0, 1, 2, 3, 4, 5)
    seed: int = 20210521

    def validate(self) -> "GroundTruthConfig":
        if self.n_customers < 1:
            raise ConfigurationError("n_customers must be >= 1")
        if not self.mixture:
            raise ConfigurationError("mixture must have at least one component")
        weights = np.array([c.weight for c in self.mixture], dtype=float)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ConfigurationError("mixture weights must lie on the simplex")
        for i, comp in enumerate(self.mixture):
            cov = comp.cov_array()
            if cov.shape != (3, 3) or comp.mean_array().shape != (3,):
                raise ConfigurationError(f"component {i} must be 3-dimensional")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ConfigurationError(f"component {i} covariance must be symmetric")
            _psd_factor(cov, context=f"component {i} covariance")
        if len(self.loyalty_loadings) != 3:
            raise ConfigurationError("loyalty_loadings must have 3 entries")
        if not self.offer_count_distribution:
            raise ConfigurationError("offer_count_distribution must be non-empty")
        counts = [c for c, _ in self.offer_count_distribution]
        probs = np.array([p for _, p in self.offer_count_distribution], dtype=float)
        if min(counts) < 1:
            raise ConfigurationError("offer counts must be >= 1")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ConfigurationError("offer count probabilities must sum to 1")
        lo, hi = self.discount_bounds
        if not (-0.5 <= lo <= hi <= 0.5):
            raise ConfigurationError("discount bounds must satisfy -0.5 <= lo <= hi <= 0.5")
        if not self.contract_values:
            raise ConfigurationError("contract_values must be non-empty")
        return self

    def to_dict(self) -> dict:
        return {
            "n_customers": self.n_customers,
            "mixture": [
                {"weight": c.weight, "mean": list(c.mean), "cov": [list(r) for r in c.cov]}
                for c in self.mixture
            ],
            "loyalty_loadings": list(self.loyalty_loadings),
            "offer_count_distribution": [[c, p] for c, p in self.offer_count_distribution],
            "discount_bounds": list(self.discount_bounds),
            "contract_values": list(self.contract_values),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthConfig":
        kwargs = {}
        if "mixture" in d:
            kwargs["mixture"] = tuple(
                MixtureComponent(
                    float(c["weight"]),
                    tuple(float(x) for x in c["mean"]),
                    tuple(tuple(float(x) for x in row) for row in c["cov"]),
                )
                for c in d["mixture"]
            )
        if "offer_count_distribution" in d:
            kwargs["offer_count_distribution"] = tuple(
                (int(c), float(p)) for c, p in d["offer_count_distribution"]
            )
        for key in ("n_customers", "seed"):
            if key in d:
                kwargs[key] = int(d[key])
        for key in ("loyalty_loadings", "discount_bounds"):
            if key in d:
                kwargs[key] = tuple(float(x) for x in d[key])
        if "contract_values" in d:
            kwargs["contract_values"] = tuple(int(x) for x in d["contract_values"])
        return cls(**kwargs).validate()


@dataclass(frozen=True)
class SimulatedDataset:
    """Training offers (many per customer), test offers (one per customer),
    customer profiles, and the true coefficients that generated them."""

    train: tuple
    test: tuple
    profiles: dict
    true_coefficients: dict
    seed: int = 0

    @property
    def n_customers(self) -> int:
        return len(self.profiles)


def _psd_factor(cov: np.ndarray, context: str = "covariance") -> np.ndarray:
    """Cholesky-like factor; accepts positive semidefinite matrices so a
    degenerate (zero-variance) component is a legal configuration."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(cov)
        if np.min(eigvals) < -1e-10:
            raise ConfigurationError(f"{context} is not positive semidefinite")
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def _draw_population(config: GroundTruthConfig):
    """Single pass over customers drawing profiles and true coefficients."""
    config.validate()
    rng = purpose_rng(config.seed, "coefficients")
    n = config.n_customers
    weights = np.cumsum([c.weight for c in config.mixture])
    means = [c.mean_array() for c in config.mixture]
    factors = [_psd_factor(c.cov_array()) for c in config.mixture]
    loadings = np.asarray(config.loyalty_loadings, dtype=float)

    loyalty = np.empty(n)
    demographic = np.empty(n)
    raw_beta = np.empty((n, 3))
    for i in range(n):
        loyalty[i] = rng.random()
        demographic[i] = rng.random()
        comp = int(np.searchsorted(weights, rng.random(), side="right"))
        comp = min(comp, len(means) - 1)
        raw_beta[i] = means[comp] + factors[comp] @ rng.standard_normal(3)

    loyalty_c = loyalty - loyalty.mean()
    demographic_c = demographic - demographic.mean()
    betas = raw_beta + loyalty_c[:, None] * loadings[None, :]

    profiles = {}
    coefficients = {}
    for i in range(n):
        cid = i + 1
        profiles[cid] = CustomerProfile(
            cid, float(loyalty[i]), float(loyalty_c[i]), float(demographic_c[i])
        )
        coefficients[cid] = CoefficientVector.from_array(betas[i])
    return profiles, coefficients


def draw_customer_profiles(config: GroundTruthConfig) -> dict:
    """Map customer_id -> CustomerProfile (loyalty drawn uniform, then centered)."""
    return _draw_population(config)[0]


def draw_true_coefficients(config: GroundTruthConfig) -> dict:
    """Map customer_id -> true CoefficientVector.

    Per customer: a mixture component is sampled by weight, a multivariate
    normal is drawn through the component's covariance factor, and the
    loyalty loadings times the centered loyalty are added to the mean.
    """
    return _draw_population(config)[1]


def generate_offers(config: GroundTruthConfig) -> SimulatedDataset:
    """Draw unlabeled training and test offers for every customer.

    Training offer counts follow ``offer_count_distribution``; discounts are
    uniform over ``discount_bounds`` and contract lengths uniform over
    ``contract_values``.  Each customer also gets exactly one test offer.
    """
    profiles, coefficients = _draw_population(config)
    rng = purpose_rng(config.seed, "offers")
    count_values = [c for c, _ in config.offer_count_distribution]
    count_cum = np.cumsum([p for _, p in config.offer_count_distribution])
    lo, hi = config.discount_bounds
    contracts = config.contract_values

    train = []
    test = []
    for cid in range(1, config.n_customers + 1):
        n_offers = count_values[
            min(int(np.searchsorted(count_cum, rng.random(), side="right")), len(count_values) - 1)
        ]
        for occ in range(1, n_offers + 1):
            attrs = OfferAttributes(
                contract_length=float(contracts[int(rng.integers(len(contracts)))]),
                discount=float(rng.uniform(lo, hi)),
            ).validate_observed()
            train.append(OfferObservation(cid, occ, attrs))
        attrs = OfferAttributes(
            contract_length=float(contracts[int(rng.integers(len(contracts)))]),
            discount=float(rng.uniform(lo, hi)),
        ).validate_observed()
        test.append(OfferObservation(cid, 1, attrs))
    return SimulatedDataset(
        train=tuple(train),
        test=tuple(test),
        profiles=profiles,
        true_coefficients=coefficients,
        seed=config.seed,
    )


def simulate_responses(
    truth: dict, dataset: SimulatedDataset, rng: np.random.Generator | None = None
) -> SimulatedDataset:
    """Label every offer with an independent Bernoulli draw at its logit
    acceptance probability under the true coefficients."""
    if rng is None:
        rng = purpose_rng(dataset.seed, "responses")

    def label(obs: OfferObservation) -> OfferObservation:
        beta = truth.get(obs.customer_id)
        if beta is None:
            raise DataIntegrityError(f"no true coefficients for customer {obs.customer_id}")
        p = accept_probability(beta, obs.attributes)
        outcome = ACCEPTED if rng.random() < p else REJECTED
        return replace(obs, outcome=outcome)

    return replace(
        dataset,
        train=tuple(label(o) for o in dataset.train),
        test=tuple(label(o) for o in dataset.test),
    )


def simulate_dataset(config: GroundTruthConfig) -> SimulatedDataset:
    """Generate offers and label them in one call."""
    dataset = generate_offers(config)
    return simulate_responses(dataset.true_coefficients, dataset)


@dataclass(frozen=True)
class ColumnStats:
    minimum: float
    first_quartile: float
    median: float
    mean: float
    third_quartile: float
    maximum: float
    count: int


@dataclass(frozen=True)
class DatasetSummary:
    columns: dict = field(default_factory=dict)
    outcome_counts: dict = field(default_factory=dict)
    empty: bool = False

    def to_text(self) -> str:
        if self.empty:
            return "(empty dataset: no observations to summarize)\n"
        stats = ["Min.", "1st Qu.", "Median", "Mean", "3rd Qu.", "Max.", "Count"]
        names = list(self.columns)
        widths = [max(len(n), 12) for n in names]
        lines = ["\t".join([""] + [n.ljust(w) for n, w in zip(names, widths)])]
        for row_idx, label in enumerate(stats):
            cells = []
            for n, w in zip(names, widths):
                c = self.columns[n]
                value = [
                    c.minimum, c.first_quartile, c.median, c.mean, c.third_quartile,
                    c.maximum, c.count,
                ][row_idx]
                cells.append(f"{value:.6g}".ljust(w))
            lines.append("\t".join([label] + cells))
        lines.append("")
        lines.append("Outcome counts:")
        for key in sorted(self.outcome_counts):
            lines.append(f"  {key}\t{self.outcome_counts[key]}")
        return "\n".join(lines) + "\n"


def _column_stats(values: np.ndarray) -> ColumnStats:
    return ColumnStats(
        minimum=float(np.min(values)),
        first_quartile=float(np.quantile(values, 0.25)),
        median=float(np.quantile(values, 0.5)),
        mean=float(np.mean(values)),
        third_quartile=float(np.quantile(values, 0.75)),
        maximum=float(np.max(values)),
        count=int(values.size),
    )


def summarize_dataset(observations, profiles: dict | None = None) -> DatasetSummary:
    """Descriptive statistics per column plus outcome counts.

    An empty observation list produces an explicit empty-report marker
    rather than an error, so filtered subsets are safe to summarize.
    """
    observations = list(observations)
    if not observations:
        return DatasetSummary(empty=True)
    columns = {
        "id": np.array([o.customer_id for o in observations], dtype=float),
        "setnum": np.array([o.occasion for o in observations], dtype=float),
        "X1": np.array([o.attributes.intercept for o in observations]),
        "contract_length_years": np.array(
            [o.attributes.contract_length for o in observations]
        ),
        "offer_discount": np.array([o.attributes.discount for o in observations]),
    }
    if profiles:
        ordered = [profiles[k] for k in sorted(profiles)]
        columns["demographic_centered"] = np.array(
            [p.demographic_centered for p in ordered]
        )
        columns["loyalty_centered"] = np.array([p.loyalty_centered for p in ordered])
    outcome_counts = {}
    for o in observations:
        outcome_counts[o.outcome] = outcome_counts.get(o.outcome, 0) + 1
    return DatasetSummary(
        columns={name: _column_stats(vals) for name, vals in columns.items()},
        outcome_counts=outcome_counts,
    )
