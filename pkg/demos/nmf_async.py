"""
Nonnegative matrix factorisation with stale reads
=================================================

Factorises a planted rank-10 nonnegative matrix three ways with the
same stepsize. The runs are serial, simulated Poisson(4) delays, and
five real threads. The stepsize is relative: each block step is
``eta / L_i`` with ``L_i`` taken at the point that was read.

Run with ``python3 demos/nmf_async.py``.
"""

from asyncbcu import Poisson, RunConfig, moments, run
from asyncbcu.problems import nmf_generate
from asyncbcu.stepsize_policy import eta_nonsmooth_nonconvex

inst = nmf_generate(100, 100, 10, seed=0)[0]
delay = Poisson(4)
choice = eta_nonsmooth_nonconvex(inst.constants(), moments(delay, 2.0).S)
print(f"eta = {choice.eta:.4f} (relative), m = {inst.m} blocks")

configs = {
    "serial": RunConfig(mode="serial", epochs=40, stepsize=choice, seed=0),
    "simulated": RunConfig(mode="simulated", epochs=40, stepsize=choice, seed=0, delay=delay),
    "async x5": RunConfig(mode="async", epochs=40, stepsize=choice, seed=0, threads=5),
}
for name, cfg in configs.items():
    res = run(inst, cfg)
    t = res.trace[-1]
    print(f"{name:>10}: objective {res.initial.objective:.4g} -> {t.objective:.4g}  "
          f"||d|| = {t.grad_map_norm:.3g}  mean delay = {res.delay_histogram @ range(res.delay_histogram.size) / res.iterations:.2f}  "
          f"{res.wall_time:.1f}s")
