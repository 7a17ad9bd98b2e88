from __future__ import annotations

from hypothesis import HealthCheck, settings

# solver calls take milliseconds to seconds; example counts stay modest
settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")
