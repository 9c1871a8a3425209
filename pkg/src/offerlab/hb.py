"""Hierarchical Bayes estimation of customer-level binary-logit coefficients.

One Gibbs sweep alternates (a) a random-walk Metropolis update of every
customer's coefficient vector against its logit likelihood times a
mixture-of-normals population prior whose means are shifted by customer
covariates, and (b) conjugate updates of the population parameters:
component indicators, Dirichlet weights, normal / inverse-Wishart component
moments, and a multivariate regression of the coefficients on covariates.

The sampler operates on a generic design matrix, so the same machinery
estimates the 3-attribute offer model and dummy-coded multinomial panels.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .choice import CoefficientVector, OfferObservation, logistic
from .errors import (
    ConfigurationError,
    DataIntegrityError,
    EstimationError,
    InvalidInputError,
    MissingArtifactError,
    UnknownCustomerError,
)
from .storage import write_array_atomic, write_json_atomic

log = logging.getLogger(__name__)

DRAW_AVERAGED = "draw-averaged"
POSTERIOR_MEAN = "posterior-mean"
POPULATION_MEAN = "population-mean"
PREDICTION_MODES = (DRAW_AVERAGED, POSTERIOR_MEAN, POPULATION_MEAN)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class McmcConfig:
    """Chain length, proposal scaling, and prior hyperparameters.

    ``rw_scale`` defaults to 2.93 / sqrt(K) at fit time.  The component
    priors are mean ~ N(mu_prior_mean, Sigma / mu_prior_precision),
    Sigma ~ InvWishart(iw_dof, iw_scale * I) with iw_dof defaulting to
    K + 3 and iw_scale to iw_dof, and weights ~ Dirichlet(concentration).
    """

    total_draws: int = 2000
    burn_in: int = 200
    keep: int = 1
    rw_scale: float | None = None
    mu_prior_mean: float = 0.0
    mu_prior_precision: float = 0.01
    iw_dof: int | None = None
    iw_scale: float | None = None
    dirichlet_concentration: float = 5.0
    seed: int = 0

    def validate(self, n_params: int) -> "McmcConfig":
        if not 0 < self.burn_in < self.total_draws:
            raise ConfigurationError("need 0 < burn_in < total_draws")
        if self.keep < 1:
            raise ConfigurationError("keep must be >= 1")
        if self.mu_prior_precision <= 0:
            raise ConfigurationError("mu_prior_precision must be > 0")
        if self.resolved_iw_dof(n_params) <= n_params + 1:
            raise ConfigurationError("iw_dof must exceed n_params + 1")
        if self.dirichlet_concentration <= 0:
            raise ConfigurationError("dirichlet_concentration must be > 0")
        return self

    def resolved_iw_dof(self, n_params: int) -> int:
        return self.iw_dof if self.iw_dof is not None else n_params + 3

    def resolved_iw_scale(self, n_params: int) -> float:
        return (
            self.iw_scale if self.iw_scale is not None else float(self.resolved_iw_dof(n_params))
        )

    def resolved_rw_scale(self, n_params: int) -> float:
        return self.rw_scale if self.rw_scale is not None else 2.93 / math.sqrt(n_params)

    def n_retained(self) -> int:
        return (self.total_draws - self.burn_in) // self.keep


@dataclass(frozen=True)
class MixtureModel:
    """Population heterogeneity: weights, component moments, and the
    covariate loading on the component means."""

    weights: np.ndarray  # (ncomp,)
    means: np.ndarray  # (ncomp, K)
    covariances: np.ndarray  # (ncomp, K, K)
    delta: np.ndarray  # (K, n_covariates)

    @property
    def ncomp(self) -> int:
        return len(self.weights)

    def validate(self) -> "MixtureModel":
        if self.ncomp < 1:
            raise ConfigurationError("mixture needs at least one component")
        if np.any(self.weights < 0) or abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ConfigurationError("mixture weights must sum to 1")
        for k in range(self.ncomp):
            try:
                np.linalg.cholesky(self.covariances[k])
            except np.linalg.LinAlgError:
                raise ConfigurationError(f"component {k} covariance is not SPD")
        return self

    def population_mean(self) -> np.ndarray:
        """Weighted mean of the component means (covariates at zero)."""
        return self.weights @ self.means


@dataclass
class PosteriorDraws:
    """Retained MCMC draws plus per-customer acceptance diagnostics."""

    customer_ids: list
    betas: np.ndarray  # (n_draws, n_customers, K)
    weights: np.ndarray  # (n_draws, ncomp)
    means: np.ndarray  # (n_draws, ncomp, K)
    covariances: np.ndarray  # (n_draws, ncomp, K, K)
    delta: np.ndarray  # (n_draws, K, n_covariates)
    log_likelihood: np.ndarray  # (n_draws,)
    acceptance_rates: np.ndarray  # (n_customers,)
    config: McmcConfig
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._index:
            self._index = {cid: i for i, cid in enumerate(self.customer_ids)}

    @property
    def n_draws(self) -> int:
        return self.betas.shape[0]

    @property
    def n_customers(self) -> int:
        return self.betas.shape[1]

    @property
    def n_params(self) -> int:
        return self.betas.shape[2]

    @property
    def ncomp(self) -> int:
        return self.weights.shape[1]

    def index_of(self, customer_id) -> int:
        try:
            return self._index[customer_id]
        except KeyError:
            raise UnknownCustomerError(customer_id)

    def __contains__(self, customer_id) -> bool:
        return customer_id in self._index

    def mixture_at(self, draw: int) -> MixtureModel:
        return MixtureModel(
            weights=self.weights[draw],
            means=self.means[draw],
            covariances=self.covariances[draw],
            delta=self.delta[draw],
        )

    def population_mean_coefficients(self) -> np.ndarray:
        """Posterior mean of the weighted mixture mean; used for customers
        that were not in the training data."""
        return np.einsum("rk,rkp->p", self.weights, self.means) / self.n_draws

    def posterior_mean_matrix(self) -> np.ndarray:
        return self.betas.mean(axis=0)

    # -- persistence ----------------------------------------------------

    _ARRAYS = (
        "betas",
        "weights",
        "means",
        "covariances",
        "delta",
        "log_likelihood",
        "acceptance_rates",
    )

    def save(self, path) -> None:
        """Write a header.json plus one .npy file per draw array."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        header = {
            "format": "hb-posterior-v1",
            "customer_ids": [int(c) for c in self.customer_ids],
            "config": asdict(self.config),
            "shapes": {name: list(getattr(self, name).shape) for name in self._ARRAYS},
        }
        for name in self._ARRAYS:
            write_array_atomic(path / f"{name}.npy", getattr(self, name))
        write_json_atomic(path / "header.json", header)

    @classmethod
    def load(cls, path) -> "PosteriorDraws":
        path = Path(path)
        header_path = path / "header.json"
        if not header_path.exists():
            raise MissingArtifactError(str(header_path))
        header = json.loads(header_path.read_text())
        if header.get("format") != "hb-posterior-v1":
            raise DataIntegrityError(f"unrecognized posterior format in {header_path}")
        arrays = {name: np.load(path / f"{name}.npy") for name in cls._ARRAYS}
        return cls(
            customer_ids=list(header["customer_ids"]),
            config=McmcConfig(**header["config"]),
            **arrays,
        )


# ---------------------------------------------------------------------------
# Panel construction
# ---------------------------------------------------------------------------


def build_panel(observations, covariates: dict | None = None):
    """Convert labeled offer observations into estimation arrays.

    Returns (X, y, row_customer, customer_ids, Z); customers are ordered by
    ascending id and every observation must be labeled.
    """
    observations = list(observations)
    if not observations:
        raise InvalidInputError("no observations to fit")
    customer_ids = sorted({o.customer_id for o in observations})
    pos = {cid: i for i, cid in enumerate(customer_ids)}
    X = np.empty((len(observations), 3))
    y = np.empty(len(observations))
    row_customer = np.empty(len(observations), dtype=np.intp)
    for i, o in enumerate(observations):
        X[i] = o.attributes.as_array()
        y[i] = o.label  # raises on unlabeled rows
        row_customer[i] = pos[o.customer_id]
    if covariates is None:
        Z = np.zeros((len(customer_ids), 0))
    else:
        missing = [cid for cid in customer_ids if cid not in covariates]
        if missing:
            raise DataIntegrityError(f"covariates missing for customers {missing[:5]}")
        Z = np.array([np.asarray(covariates[cid], dtype=float) for cid in customer_ids])
        if Z.ndim == 1:
            Z = Z[:, None]
    return X, y, row_customer, customer_ids, Z


# ---------------------------------------------------------------------------
# Sampler internals
# ---------------------------------------------------------------------------


def _pooled_logit(X: np.ndarray, y: np.ndarray, ridge: float = 1e-6):
    """Newton fit of a pooled logit; returns (beta_hat, mean per-row
    information matrix at the optimum)."""
    n, k = X.shape
    beta = np.zeros(k)
    for _ in range(50):
        p = logistic(X @ beta)
        w = np.clip(p * (1.0 - p), 1e-10, None)
        H = (X * w[:, None]).T @ X + ridge * np.eye(k)
        g = X.T @ (y - p) - ridge * beta
        step = np.linalg.solve(H, g)
        beta = beta + step
        if np.max(np.abs(step)) < 1e-10:
            break
    p = logistic(X @ beta)
    w = p * (1.0 - p)
    info = (X * w[:, None]).T @ X / n
    return beta, info


def _customer_loglik(X, y, row_customer, n_customers, betas):
    """Per-customer binary-logit log likelihood at one beta per customer."""
    u = np.einsum("ij,ij->i", X, betas[row_customer])
    row_ll = y * u - np.logaddexp(0.0, u)
    return np.bincount(row_customer, weights=row_ll, minlength=n_customers)


def _chol_or_abort(matrix, draw, what):
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise EstimationError(f"Cholesky of {what} failed at draw {draw}")


def _mvn_logpdf_grouped(x, mean, ind, chols, logdets):
    """log N(x_i | mean_i, Sigma_{ind_i}) for component-indexed covariances."""
    out = np.empty(len(x))
    diff = x - mean
    k = x.shape[1]
    for comp, L in enumerate(chols):
        mask = ind == comp
        if not np.any(mask):
            continue
        sol = np.linalg.solve(L, diff[mask].T)
        out[mask] = -0.5 * (k * _LOG_2PI + logdets[comp] + np.sum(sol * sol, axis=0))
    return out


def _mvn_logpdf_all_components(x, means, chols, logdets):
    """(n, ncomp) matrix of log N(x_i | mu_k, Sigma_k)."""
    n, k = x.shape
    out = np.empty((n, len(chols)))
    for comp, L in enumerate(chols):
        sol = np.linalg.solve(L, (x - means[comp]).T)
        out[:, comp] = -0.5 * (k * _LOG_2PI + logdets[comp] + np.sum(sol * sol, axis=0))
    return out


def _draw_invwishart(rng, dof, scale, draw, what):
    """Inverse-Wishart draw via the Bartlett decomposition (deterministic
    under the supplied generator)."""
    k = scale.shape[0]
    L = _chol_or_abort(np.linalg.inv(scale), draw, f"inverse scale of {what}")
    A = np.zeros((k, k))
    for i in range(k):
        A[i, i] = math.sqrt(rng.chisquare(dof - i))
        for j in range(i):
            A[i, j] = rng.standard_normal()
    W = L @ A
    W = W @ W.T
    return np.linalg.inv(W)


def fit_hb_panel(
    X: np.ndarray,
    y: np.ndarray,
    row_customer: np.ndarray,
    customer_ids,
    Z: np.ndarray | None = None,
    ncomp: int = 1,
    config: McmcConfig | None = None,
) -> PosteriorDraws:
    """Run the Metropolis-within-Gibbs chain on estimation arrays.

    ``row_customer`` maps each row to a position in ``customer_ids``; ``Z``
    holds one covariate row per customer (may be zero-width).
    """
    config = config or McmcConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    row_customer = np.asarray(row_customer, dtype=np.intp)
    n_cust = len(customer_ids)
    n_params = X.shape[1]
    if ncomp < 1:
        raise ConfigurationError("ncomp must be >= 1")
    config.validate(n_params)
    if np.bincount(row_customer, minlength=n_cust).min() < 1:
        raise DataIntegrityError("every customer needs at least one observation")
    Z = np.zeros((n_cust, 0)) if Z is None else np.asarray(Z, dtype=float)
    n_cov = Z.shape[1]

    rng = np.random.default_rng(np.random.SeedSequence(config.seed & 0xFFFFFFFFFFFFFFFF))

    # Priors
    amu = config.mu_prior_precision
    mubar = np.full(n_params, config.mu_prior_mean)
    nu = config.resolved_iw_dof(n_params)
    V = config.resolved_iw_scale(n_params) * np.eye(n_params)
    dir_alpha = np.full(ncomp, config.dirichlet_concentration)
    prior_cov_guess = V / (nu - n_params - 1)

    # Random-walk proposal: scaled inverse of the pooled-likelihood Hessian
    # approximation for each customer (rows * mean row information) plus the
    # precision of the current population covariance -- without the prior
    # term the proposal is far wider than a sparse customer's posterior and
    # the chain stalls.  The population covariance is re-estimated a few
    # times during burn-in and frozen afterwards, so retained draws come
    # from a fixed-kernel chain.  Falls back to a fraction of the prior
    # covariance when the pooled Hessian is singular.
    scale = config.resolved_rw_scale(n_params)
    rows_per_cust = np.bincount(row_customer, minlength=n_cust)
    beta_pool, info = _pooled_logit(X, y)

    def proposal_factors(population_cov):
        try:
            pop_precision = np.linalg.inv(population_cov)
            factor_by_count = {}
            for m in np.unique(rows_per_cust):
                precision = m * info + pop_precision
                factor_by_count[m] = np.linalg.cholesky(scale**2 * np.linalg.inv(precision))
            return np.stack([factor_by_count[m] for m in rows_per_cust])
        except np.linalg.LinAlgError:
            fallback = np.linalg.cholesky(scale**2 * 0.5 * prior_cov_guess)
            return np.tile(fallback, (n_cust, 1, 1))

    prop_factor = proposal_factors(prior_cov_guess)
    adapt_every = max(min(25, config.burn_in // 4), 1)

    # State.  Customer betas start at the pooled fit plus prior-scale noise:
    # an all-equal start has zero scatter, which collapses the first
    # covariance draw and can trap the chain in an over-shrunk state.
    beta = np.tile(beta_pool, (n_cust, 1)) + rng.standard_normal(
        (n_cust, n_params)
    ) @ np.linalg.cholesky(prior_cov_guess).T
    ind = np.zeros(n_cust, dtype=np.intp)
    weights = np.full(ncomp, 1.0 / ncomp)
    mu = np.tile(beta_pool, (ncomp, 1))
    Sigma = np.tile(prior_cov_guess, (ncomp, 1, 1))
    # start the covariate loading at its pooled interaction estimate; a zero
    # start can settle into a sign-flipped basin that the chain corrects
    # only slowly
    delta = np.zeros((n_params, n_cov))
    if n_cov:
        z_rows = Z[row_customer]
        X_ext = np.hstack([X] + [X * z_rows[:, [j]] for j in range(n_cov)])
        beta_ext, _ = _pooled_logit(X_ext, y)
        delta = np.stack(
            [beta_ext[n_params * (j + 1) : n_params * (j + 2)] for j in range(n_cov)],
            axis=1,
        )
    loglik_cust = _customer_loglik(X, y, row_customer, n_cust, beta)
    accept_counts = np.zeros(n_cust)

    n_keep = config.n_retained()
    out_betas = np.empty((n_keep, n_cust, n_params))
    out_weights = np.empty((n_keep, ncomp))
    out_means = np.empty((n_keep, ncomp, n_params))
    out_covs = np.empty((n_keep, ncomp, n_params, n_params))
    out_delta = np.empty((n_keep, n_params, n_cov))
    out_loglik = np.empty(n_keep)

    kept = 0
    for it in range(1, config.total_draws + 1):
        chols = [_chol_or_abort(Sigma[k], it, f"component {k} covariance") for k in range(ncomp)]
        logdets = [2.0 * float(np.sum(np.log(np.diag(L)))) for L in chols]
        prior_mean = mu[ind] + Z @ delta.T

        # (a) random-walk Metropolis, all customers at once
        eps = rng.standard_normal((n_cust, n_params))
        proposal = beta + np.einsum("nij,nj->ni", prop_factor, eps)
        loglik_prop = _customer_loglik(X, y, row_customer, n_cust, proposal)
        logprior_cur = _mvn_logpdf_grouped(beta, prior_mean, ind, chols, logdets)
        logprior_prop = _mvn_logpdf_grouped(proposal, prior_mean, ind, chols, logdets)
        log_ratio = (loglik_prop - loglik_cust) + (logprior_prop - logprior_cur)
        accept = np.log(rng.random(n_cust)) < log_ratio
        beta[accept] = proposal[accept]
        loglik_cust[accept] = loglik_prop[accept]
        accept_counts += accept

        # (b) component indicators on covariate-adjusted coefficients
        resid = beta - Z @ delta.T
        log_dens = _mvn_logpdf_all_components(resid, mu, chols, logdets)
        log_post = np.log(weights)[None, :] + log_dens
        log_post -= log_post.max(axis=1, keepdims=True)
        probs = np.exp(log_post)
        probs /= probs.sum(axis=1, keepdims=True)
        u = rng.random(n_cust)
        ind = np.minimum(
            (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1), ncomp - 1
        ).astype(np.intp)

        # (c) Dirichlet weights (degenerate at exactly 1 for one component)
        counts = np.bincount(ind, minlength=ncomp)
        weights = np.ones(1) if ncomp == 1 else rng.dirichlet(dir_alpha + counts)

        # (d) per-component normal / inverse-Wishart moments
        for k in range(ncomp):
            members = resid[ind == k]
            n_k = len(members)
            if n_k:
                bbar = members.mean(axis=0)
                centered = members - bbar
                scatter = centered.T @ centered
                dev = bbar - mubar
                iw_scale_post = V + scatter + (amu * n_k / (amu + n_k)) * np.outer(dev, dev)
                post_mean = (amu * mubar + n_k * bbar) / (amu + n_k)
            else:
                iw_scale_post = V
                post_mean = mubar
            Sigma[k] = _draw_invwishart(rng, nu + n_k, iw_scale_post, it, f"component {k}")
            L = _chol_or_abort(Sigma[k] / (amu + n_k), it, f"component {k} mean")
            mu[k] = post_mean + L @ rng.standard_normal(n_params)

        # (e) covariate loading via Bayes multivariate regression (GLS over
        # components, prior precision mu_prior_precision * I on vec(delta))
        if n_cov:
            dim = n_params * n_cov
            A = amu * np.eye(dim)
            b = np.zeros(dim)
            dev = beta - mu[ind]
            for k in range(ncomp):
                mask = ind == k
                if not np.any(mask):
                    continue
                isig = np.linalg.inv(Sigma[k])
                Zk = Z[mask]
                A += np.kron(Zk.T @ Zk, isig)
                b += (isig @ dev[mask].T @ Zk).flatten(order="F")
            A_inv = np.linalg.inv(A)
            vec = A_inv @ b + _chol_or_abort(A_inv, it, "delta posterior") @ rng.standard_normal(dim)
            delta = vec.reshape((n_params, n_cov), order="F")

        if it <= config.burn_in and it % adapt_every == 0:
            # population covariance incl. between-component spread
            pop_mean = weights @ mu
            centered = mu - pop_mean
            pop_cov = np.einsum("k,kij->ij", weights, Sigma) + (
                centered.T * weights
            ) @ centered
            prop_factor = proposal_factors(pop_cov)

        if it > config.burn_in and (it - config.burn_in) % config.keep == 0:
            out_betas[kept] = beta
            out_weights[kept] = weights
            out_means[kept] = mu
            out_covs[kept] = Sigma
            out_delta[kept] = delta
            out_loglik[kept] = float(loglik_cust.sum())
            kept += 1

    rates = accept_counts / config.total_draws
    low, high = float(rates.min()), float(rates.max())
    if low < 0.05 or high > 0.70:
        log.warning(
            "Metropolis acceptance rates outside (0.05, 0.70): min=%.3f max=%.3f", low, high
        )

    return PosteriorDraws(
        customer_ids=list(customer_ids),
        betas=out_betas,
        weights=out_weights,
        means=out_means,
        covariances=out_covs,
        delta=out_delta,
        log_likelihood=out_loglik,
        acceptance_rates=rates,
        config=config,
    )


def fit_hb_mixed_logit(
    observations,
    covariates: dict | None = None,
    ncomp: int = 1,
    config: McmcConfig | None = None,
) -> PosteriorDraws:
    """Fit the offer model (intercept, contract years, discount) by HB MCMC.

    ``covariates`` maps customer_id to a covariate vector entering the
    population means; omit it for a covariate-free population distribution.
    """
    X, y, row_customer, customer_ids, Z = build_panel(observations, covariates)
    return fit_hb_panel(X, y, row_customer, customer_ids, Z, ncomp=ncomp, config=config)


# ---------------------------------------------------------------------------
# Posterior summaries and prediction
# ---------------------------------------------------------------------------


def posterior_mean_betas(draws: PosteriorDraws) -> dict:
    """Arithmetic mean of retained draws per customer, as coefficient vectors."""
    if draws.n_draws < 1:
        raise InvalidInputError("no retained draws")
    if draws.n_params != 3:
        raise InvalidInputError("posterior_mean_betas requires the 3-attribute offer model")
    mean = draws.posterior_mean_matrix()
    return {
        cid: CoefficientVector.from_array(mean[i])
        for i, cid in enumerate(draws.customer_ids)
    }


def predict_panel_probabilities(
    draws: PosteriorDraws,
    X: np.ndarray,
    row_customer_ids,
    mode: str = DRAW_AVERAGED,
    fallback_population_mean: bool = False,
    chunk: int = 1024,
) -> np.ndarray:
    """Acceptance probabilities for arbitrary design rows.

    Unknown customers raise UnknownCustomerError unless
    ``fallback_population_mean`` is set, in which case their rows are scored
    at the population mean coefficients.
    """
    if mode not in PREDICTION_MODES:
        raise InvalidInputError(f"mode must be one of {PREDICTION_MODES}, got {mode!r}")
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    pop_beta = draws.population_mean_coefficients()
    if mode == POPULATION_MEAN:
        return logistic(X @ pop_beta)

    known = np.empty(n, dtype=bool)
    idx = np.zeros(n, dtype=np.intp)
    for i, cid in enumerate(row_customer_ids):
        inside = cid in draws
        known[i] = inside
        if inside:
            idx[i] = draws.index_of(cid)
        elif not fallback_population_mean:
            raise UnknownCustomerError(cid)

    out = np.empty(n)
    if mode == POSTERIOR_MEAN:
        mean = draws.posterior_mean_matrix()
        out[known] = logistic(np.einsum("ij,ij->i", X[known], mean[idx[known]]))
    else:
        ks = np.flatnonzero(known)
        for start in range(0, len(ks), chunk):
            rows = ks[start : start + chunk]
            # (n_draws, chunk): utility of each row under each retained draw
            u = np.einsum("rij,ij->ri", draws.betas[:, idx[rows], :], X[rows])
            out[rows] = logistic(u).mean(axis=0)
    out[~known] = logistic(X[~known] @ pop_beta)
    return out


def predict_probability(
    draws: PosteriorDraws, offer: OfferObservation, mode: str = DRAW_AVERAGED
) -> float:
    """Acceptance probability for one offer under the fitted model."""
    if draws.n_params != 3:
        raise InvalidInputError("predict_probability requires the 3-attribute offer model")
    x = offer.attributes.as_array()[None, :]
    return float(predict_panel_probabilities(draws, x, [offer.customer_id], mode=mode)[0])
