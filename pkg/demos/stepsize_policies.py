"""
Expected-delay versus max-delay stepsizes
=========================================

Simulates 40 workers (Poisson delays with mean 39) on a LASSO instance
and compares two stepsizes. One is set from the expected delay, the
other from the largest delay the run actually drew. The larger
expected-delay stepsize should reach a lower objective in the same
number of epochs.

Run with ``python3 demos/stepsize_policies.py``. Writes
``stepsize_policies.csv`` in the working directory.
"""

import csv

import numpy as np

from asyncbcu import Poisson, RunConfig, run_simulated
from asyncbcu.engine import simulated_delays
from asyncbcu.problems import lasso_generate
from asyncbcu.stepsize_policy import eta_experiment

inst = lasso_generate(200, 400, seed=0, m=40)
c = inst.constants()
delay = Poisson(39)
epochs, seeds = 30, range(3)

# the max-delay rule needs tau; replay each seed's delay stream to get it
tau = max(simulated_delays(delay, s, epochs * inst.m, inst.m).max() for s in seeds)
choices = {
    "expected": eta_experiment(c, delay.p, "expected"),
    "max": eta_experiment(c, float(tau), "max"),
}
print(f"tau = {tau}")
for name, ch in choices.items():
    print(f"{name:>8}: eta = {ch.eta:.4g}  ({ch.eta * c.L_c:.3f} / L_c)")

curves = {}
for name, ch in choices.items():
    runs = []
    for s in seeds:
        res = run_simulated(inst, RunConfig(mode="simulated", epochs=epochs, stepsize=ch, seed=s, delay=delay,
                                            trace_grad_map=False))
        runs.append([res.initial.objective] + [t.objective for t in res.trace])
    curves[name] = np.mean(runs, axis=0)

print("\nepoch   expected-delay      max-delay")
for e in range(0, epochs + 1, 5):
    print(f"{e:5d}  {curves['expected'][e]:15.6g}  {curves['max'][e]:13.6g}")

with open("stepsize_policies.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(("epoch", "expected", "max"))
    for e in range(epochs + 1):
        w.writerow((e, curves["expected"][e], curves["max"][e]))
