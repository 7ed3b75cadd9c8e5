"""Asynchronous parallel block-coordinate updates with delay-aware stepsizes."""

from . import delay_model, engine, metrics, problems, stepsize_policy
from .delay_model import Deterministic, DelayMoments, Empirical, Poisson, fit_poisson, moments, pmf, sample, tail
from .engine import RunConfig, RunResult, gradient_map, run, run_async, run_serial, run_simulated
from .stepsize_policy import ProblemConstants, Regime, StepsizeChoice

__version__ = "0.1.0"
