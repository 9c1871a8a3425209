import math

import numpy as np
import pytest

from offerlab.choice import OfferAttributes, OfferObservation
from offerlab.errors import (
    ConfigurationError,
    DataIntegrityError,
    InvalidInputError,
    UnknownCustomerError,
)
from offerlab.hb import (
    DRAW_AVERAGED,
    POPULATION_MEAN,
    POSTERIOR_MEAN,
    McmcConfig,
    MixtureModel,
    PosteriorDraws,
    build_panel,
    fit_hb_mixed_logit,
    fit_hb_panel,
    posterior_mean_betas,
    predict_panel_probabilities,
    predict_probability,
)
from offerlab.simulate import GroundTruthConfig, simulate_dataset


def small_fit(n_customers=40, total_draws=600, burn_in=120, ncomp=1, data_seed=51, chain_seed=4):
    dataset = simulate_dataset(GroundTruthConfig(n_customers=n_customers, seed=data_seed))
    covariates = {cid: (p.loyalty_centered,) for cid, p in dataset.profiles.items()}
    config = McmcConfig(total_draws=total_draws, burn_in=burn_in, seed=chain_seed)
    draws = fit_hb_mixed_logit(dataset.train, covariates, ncomp=ncomp, config=config)
    return dataset, draws


def hand_built_draws(betas, weights=None, means=None, customer_ids=None):
    """PosteriorDraws with explicit beta draws; mixture filled in trivially."""
    betas = np.asarray(betas, dtype=float)
    n_draws, n_cust, k = betas.shape
    if customer_ids is None:
        customer_ids = list(range(1, n_cust + 1))
    if means is None:
        means = betas.mean(axis=1, keepdims=True)
    if weights is None:
        weights = np.ones((n_draws, means.shape[1])) / means.shape[1]
    covs = np.tile(np.eye(k), (n_draws, means.shape[1], 1, 1))
    return PosteriorDraws(
        customer_ids=customer_ids,
        betas=betas,
        weights=np.asarray(weights, dtype=float),
        means=np.asarray(means, dtype=float),
        covariances=covs,
        delta=np.zeros((n_draws, k, 0)),
        log_likelihood=np.zeros(n_draws),
        acceptance_rates=np.full(n_cust, 0.3),
        config=McmcConfig(seed=0),
    )


class TestConfig:
    def test_burn_in_bounds(self):
        with pytest.raises(ConfigurationError):
            McmcConfig(total_draws=100, burn_in=100).validate(3)
        with pytest.raises(ConfigurationError):
            McmcConfig(total_draws=100, burn_in=0).validate(3)

    def test_keep_and_dirichlet(self):
        with pytest.raises(ConfigurationError):
            McmcConfig(keep=0).validate(3)
        with pytest.raises(ConfigurationError):
            McmcConfig(dirichlet_concentration=0.0).validate(3)

    def test_iw_dof_floor(self):
        with pytest.raises(ConfigurationError):
            McmcConfig(iw_dof=4).validate(3)

    def test_retained_count(self):
        assert McmcConfig(total_draws=5000, burn_in=500, keep=1).n_retained() == 4500
        assert McmcConfig(total_draws=1000, burn_in=100, keep=7).n_retained() == 128


class TestPanel:
    def test_unlabeled_rows_rejected(self):
        rows = [OfferObservation(1, 1, OfferAttributes(1, 0.1))]
        with pytest.raises(InvalidInputError):
            build_panel(rows)

    def test_missing_covariates_rejected(self):
        rows = [
            OfferObservation(1, 1, OfferAttributes(1, 0.1), outcome="accepted"),
            OfferObservation(2, 1, OfferAttributes(1, 0.1), outcome="rejected"),
        ]
        with pytest.raises(DataIntegrityError):
            build_panel(rows, covariates={1: (0.0,)})

    def test_customers_sorted_by_id(self):
        rows = [
            OfferObservation(9, 1, OfferAttributes(1, 0.1), outcome="accepted"),
            OfferObservation(2, 1, OfferAttributes(0, -0.1), outcome="rejected"),
        ]
        _, _, _, customer_ids, _ = build_panel(rows)
        assert customer_ids == [2, 9]


class TestSampler:
    def test_retained_draw_count_matches_config(self):
        _, draws = small_fit(n_customers=8, total_draws=300, burn_in=60)
        assert draws.n_draws == (300 - 60) // 1

    def test_five_thousand_draw_schedule(self):
        dataset = simulate_dataset(GroundTruthConfig(n_customers=8, seed=61))
        config = McmcConfig(total_draws=5000, burn_in=500, seed=2)
        draws = fit_hb_mixed_logit(dataset.train, None, ncomp=1, config=config)
        assert draws.n_draws == 4500

    def test_single_component_weights_are_one(self):
        _, draws = small_fit(n_customers=12, total_draws=200, burn_in=40)
        assert np.all(draws.weights == 1.0)

    def test_determinism(self):
        _, a = small_fit(n_customers=15, total_draws=250, burn_in=50, chain_seed=9)
        _, b = small_fit(n_customers=15, total_draws=250, burn_in=50, chain_seed=9)
        assert np.array_equal(a.betas, b.betas)
        assert np.array_equal(a.covariances, b.covariances)
        assert np.array_equal(a.log_likelihood, b.log_likelihood)

    def test_retained_mixtures_satisfy_invariants(self):
        _, draws = small_fit(n_customers=25, total_draws=300, burn_in=60, ncomp=2)
        for r in range(0, draws.n_draws, 37):
            draws.mixture_at(r).validate()

    def test_acceptance_rates_within_diagnostic_band(self):
        _, draws = small_fit(n_customers=120, total_draws=800, burn_in=160, data_seed=71)
        assert draws.acceptance_rates.min() > 0.05
        assert draws.acceptance_rates.max() < 0.70

    def test_shrinkage_keeps_sparse_customers_near_population(self):
        dataset, draws = small_fit(n_customers=60, total_draws=600, burn_in=150, data_seed=81)
        counts = {}
        for obs in dataset.train:
            counts[obs.customer_id] = counts.get(obs.customer_id, 0) + 1
        post_mean = draws.posterior_mean_matrix()
        mean_mu = draws.means.mean(axis=0)[0]
        mean_sigma = draws.covariances.mean(axis=0)[0]
        mean_delta = draws.delta.mean(axis=0)
        scale = np.sqrt(np.diag(mean_sigma))
        z = {cid: p.loyalty_centered for cid, p in dataset.profiles.items()}
        singles = [cid for cid, c in counts.items() if c == 1]
        assert singles
        for cid in singles:
            idx = draws.index_of(cid)
            prior_mean = mean_mu + mean_delta[:, 0] * z[cid]
            assert np.all(np.abs(post_mean[idx] - prior_mean) <= 5.0 * scale)

    def test_exact_inference_on_flat_prior_toy(self):
        # one customer, one parameter; population pinned to N(0, ~100)
        X = np.ones((4, 1))
        y = np.array([1.0, 1.0, 0.0, 1.0])
        row_customer = np.zeros(4, dtype=int)
        config = McmcConfig(
            total_draws=6000,
            burn_in=1000,
            seed=123,
            mu_prior_precision=1e8,
            iw_dof=2000,
            iw_scale=1998 * 100.0,
        )
        draws = fit_hb_panel(X, y, row_customer, [1], None, ncomp=1, config=config)
        mcmc_mean = float(draws.betas[:, 0, 0].mean())

        # dense quadrature of likelihood x N(0, 100)
        grid = np.linspace(-12.0, 12.0, 24001)
        loglik = 3 * (grid - np.logaddexp(0, grid)) - np.logaddexp(0, grid)
        logprior = -0.5 * grid**2 / 100.0
        w = np.exp(loglik + logprior - (loglik + logprior).max())
        quad_mean = float((grid * w).sum() / w.sum())
        assert mcmc_mean == pytest.approx(quad_mean, abs=0.05)

    def test_recovery_on_thousand_customer_dataset(self):
        dataset = simulate_dataset(GroundTruthConfig(n_customers=1000, seed=91))
        covariates = {cid: (p.loyalty_centered,) for cid, p in dataset.profiles.items()}
        config = McmcConfig(total_draws=800, burn_in=150, seed=14)
        draws = fit_hb_mixed_logit(dataset.train, covariates, ncomp=1, config=config)
        post = draws.posterior_mean_matrix()
        true = np.array(
            [dataset.true_coefficients[c].as_array() for c in draws.customer_ids]
        )
        corr = np.corrcoef(post[:, 2], true[:, 2])[0, 1]
        assert corr >= 0.5

    def test_zero_observation_guard(self):
        X = np.ones((2, 1))
        y = np.array([1.0, 0.0])
        row_customer = np.zeros(2, dtype=int)
        with pytest.raises(DataIntegrityError):
            fit_hb_panel(X, y, row_customer, [1, 2], None)


class TestSummaries:
    def test_posterior_mean_of_single_draw(self):
        draws = hand_built_draws([[[0.5, -0.2, 1.0]]])
        betas = posterior_mean_betas(draws)
        assert betas[1].as_array() == pytest.approx([0.5, -0.2, 1.0])

    def test_symmetric_draws_cancel(self):
        b = np.array([[0.4, -1.0, 2.0]])
        draws = hand_built_draws([b, -b])
        assert posterior_mean_betas(draws)[1].as_array() == pytest.approx([0, 0, 0])

    def test_empty_draws_rejected(self):
        draws = hand_built_draws(np.empty((0, 1, 3)))
        with pytest.raises(InvalidInputError):
            posterior_mean_betas(draws)


class TestPrediction:
    def test_single_draw_modes_agree(self):
        draws = hand_built_draws([[[1.0, 0.5, -2.0]]])
        offer = OfferObservation(1, 1, OfferAttributes(2, 0.1))
        averaged = predict_probability(draws, offer, mode=DRAW_AVERAGED)
        point = predict_probability(draws, offer, mode=POSTERIOR_MEAN)
        assert averaged == point == pytest.approx(1 / (1 + math.exp(-1.8)), abs=1e-12)

    def test_draw_averaged_is_mean_of_per_draw_probabilities(self):
        betas = np.array([[[0.2, 0.1, -1.0]], [[1.4, -0.3, -4.0]], [[-0.8, 0.6, 0.5]]])
        draws = hand_built_draws(betas)
        offer = OfferObservation(1, 3, OfferAttributes(3, -0.25))
        x = offer.attributes.as_array()
        expected = np.mean([1 / (1 + math.exp(-(b[0] @ x))) for b in betas])
        assert predict_probability(draws, offer) == pytest.approx(expected, abs=1e-12)

    def test_population_mean_mode_for_new_customer(self):
        means = np.array([[[1.0, 0.0, -2.0], [3.0, 0.0, -2.0]]])
        weights = np.array([[0.25, 0.75]])
        draws = hand_built_draws([[[9.9, 9.9, 9.9]]], weights=weights, means=means)
        offer = OfferObservation(777, 1, OfferAttributes(0, 0.0))
        expected = 1 / (1 + math.exp(-(0.25 * 1.0 + 0.75 * 3.0)))
        assert predict_probability(draws, offer, mode=POPULATION_MEAN) == pytest.approx(
            expected, abs=1e-12
        )

    def test_unknown_customer_raises_without_fallback(self):
        draws = hand_built_draws([[[1.0, 0.5, -2.0]]])
        offer = OfferObservation(55, 1, OfferAttributes(2, 0.1))
        with pytest.raises(UnknownCustomerError):
            predict_probability(draws, offer)

    def test_unknown_customer_fallback_matches_population_mode(self):
        draws = hand_built_draws([[[1.0, 0.5, -2.0]], [[0.2, 0.0, -1.0]]])
        x = np.array([[1.0, 2.0, 0.1]])
        fallback = predict_panel_probabilities(
            draws, x, [55], fallback_population_mean=True
        )
        population = predict_panel_probabilities(draws, x, [55], mode=POPULATION_MEAN)
        assert fallback[0] == pytest.approx(population[0], abs=1e-15)

    def test_unknown_mode_rejected(self):
        draws = hand_built_draws([[[1.0, 0.5, -2.0]]])
        with pytest.raises(InvalidInputError):
            predict_panel_probabilities(draws, np.ones((1, 3)), [1], mode="oracular")


class TestPersistence:
    def test_round_trip(self, tmp_path):
        _, draws = small_fit(n_customers=10, total_draws=200, burn_in=40, ncomp=2)
        draws.save(tmp_path / "posterior")
        loaded = PosteriorDraws.load(tmp_path / "posterior")
        assert loaded.customer_ids == draws.customer_ids
        assert np.array_equal(loaded.betas, draws.betas)
        assert np.array_equal(loaded.weights, draws.weights)
        assert np.array_equal(loaded.delta, draws.delta)
        assert loaded.config == draws.config

    def test_missing_header_raises(self, tmp_path):
        from offerlab.errors import MissingArtifactError

        with pytest.raises(MissingArtifactError):
            PosteriorDraws.load(tmp_path / "nothing")


class TestMixtureModel:
    def test_weight_sum_enforced(self):
        model = MixtureModel(
            weights=np.array([0.6, 0.5]),
            means=np.zeros((2, 3)),
            covariances=np.tile(np.eye(3), (2, 1, 1)),
            delta=np.zeros((3, 0)),
        )
        with pytest.raises(ConfigurationError):
            model.validate()

    def test_spd_enforced(self):
        bad = np.tile(np.eye(3), (1, 1, 1))
        bad[0, 2, 2] = -1.0
        model = MixtureModel(
            weights=np.array([1.0]),
            means=np.zeros((1, 3)),
            covariances=bad,
            delta=np.zeros((3, 0)),
        )
        with pytest.raises(ConfigurationError):
            model.validate()

    def test_population_mean(self):
        model = MixtureModel(
            weights=np.array([0.25, 0.75]),
            means=np.array([[1.0, 0.0, -2.0], [3.0, 0.0, -2.0]]),
            covariances=np.tile(np.eye(3), (2, 1, 1)),
            delta=np.zeros((3, 0)),
        )
        assert model.validate().population_mean() == pytest.approx([2.5, 0.0, -2.0])
