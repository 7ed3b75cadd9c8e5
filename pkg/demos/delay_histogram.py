"""
Measured delays of real threads
===============================

Runs the threaded solver on a LASSO instance with 1 to 5 workers and
prints the delay histogram of each run next to a Poisson fit. With
``threads`` workers running at similar speeds the mean delay should sit
near ``threads - 1``.

Run with ``python3 demos/delay_histogram.py``.
"""

import numpy as np

from asyncbcu import RunConfig, run_async
from asyncbcu.metrics import delay_report
from asyncbcu.problems import lasso_generate

# a small instance: we care about timing, not accuracy
inst = lasso_generate(200, 400, seed=0, m=100)
eta = 0.5 / inst.constants().L_c

for threads in range(1, 6):
    res = run_async(inst, RunConfig(mode="async", epochs=20, stepsize=eta, threads=threads, seed=0))
    rep = delay_report(res.delay_histogram, threads)
    head = np.round(rep.normalized[:10], 3)
    print(f"threads={threads}  p_hat={rep.p_hat:.2f}  mode={int(np.argmax(res.delay_histogram))}  "
          f"KL(model)={rep.kl_vs_model:.3g}")
    print("   q_0..q_9:", head)
    if rep.note:
        print("  ", rep.note)
