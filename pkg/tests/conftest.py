from hypothesis import HealthCheck, settings

# property tests draw the same examples on every run so the suite stays
# reproducible
settings.register_profile(
    "deterministic", derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("deterministic")
