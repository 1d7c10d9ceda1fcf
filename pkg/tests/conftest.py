import os

from hypothesis import HealthCheck, settings

# first calls into numba kernels compile; per-example deadlines would be noise
settings.register_profile("nqcs", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "nqcs"))
