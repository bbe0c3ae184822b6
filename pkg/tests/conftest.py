from hypothesis import settings

# fixed example sequence so recorded runs are reproducible
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")
