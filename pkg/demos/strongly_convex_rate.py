"""
Linear rate on a strongly convex quadratic
==========================================

Runs the delay simulator on a diagonal quadratic with a known minimiser
and tracks the potential ``||x - x*||^2 + 2 eta (F(x) - F*)``. Its fitted
per-iteration contraction is compared with the predicted factor
``1 - eta mu / (m (1 + eta mu))``.

Run with ``python3 demos/strongly_convex_rate.py``.
"""

import numpy as np

from asyncbcu import Poisson, RunConfig, moments, run_simulated
from asyncbcu.metrics import fit_linear_rate, phi
from asyncbcu.problems import quadratic_toy
from asyncbcu.stepsize_policy import best_rho_nonsmooth_convex, choose_rho, eta_nonsmooth_convex

q = quadratic_toy(200, 1.0, 10.0, seed=0, m=200)
c = q.constants()
delay = Poisson(4)

# the default rho = 1 + 1/p admits no stepsize with only 200 blocks
try:
    eta_nonsmooth_convex(c, moments(delay, choose_rho(delay.p)))
except ValueError as err:
    print("default rho:", err)
rho = best_rho_nonsmooth_convex(c, delay)
choice = eta_nonsmooth_convex(c, moments(delay, rho))
print(f"rho = {rho:.4f}  eta = {choice.eta:.4g}  predicted factor = {choice.rate.linear_factor:.8f}")

every, epochs = 100, 50
vals = [phi(q, q.initial_point(), choice.eta, q.x_star, q.f_star)]


def record(k, i, j, x):
    if k % every == 0:
        vals.append(phi(q, x, choice.eta, q.x_star, q.f_star))


run_simulated(q, RunConfig(mode="simulated", epochs=epochs, stepsize=choice, seed=0, delay=delay,
                           trace_grad_map=False), callback=record)
vals = np.array(vals)
factor = fit_linear_rate(vals, np.arange(vals.size) * every)
print(f"empirical factor = {factor:.8f}")
print(f"potential: {vals[0]:.4g} -> {vals[-1]:.4g} after {epochs} epochs")
