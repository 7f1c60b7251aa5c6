import hypothesis

# property tests must replay identically in CI and locally
hypothesis.settings.register_profile(
    "deterministic", derandomize=True, max_examples=200, deadline=None
)
hypothesis.settings.load_profile("deterministic")
