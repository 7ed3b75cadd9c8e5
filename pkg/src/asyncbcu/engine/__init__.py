from .runners import RunConfig, RunResult, gradient_map, run, run_async, run_serial, run_simulated, simulated_delays
from .shared import AtomicCounter, SeqLock, SharedIterate

__all__ = [
    "RunConfig",
    "RunResult",
    "gradient_map",
    "run",
    "run_async",
    "run_serial",
    "run_simulated",
    "simulated_delays",
    "AtomicCounter",
    "SeqLock",
    "SharedIterate",
]
