"""Compare the numba kernels with their numpy fallbacks.

Part 1 times each kernel in-process through its explicit ``*_numpy`` /
``*_numba`` name (after one warm-up call, so JIT compilation is excluded)
and checks the two outputs agree.  Part 2 runs a short learner in two
subprocesses, one with ``RHUCRL_DISABLE_NUMBA=1``, and compares wall time
and the episode values, which must be identical up to summation order.

    python benchmarks/bench_backends.py [--repeats 20] [--episodes 3]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from rhucrl import _kernels as K


def _time(fn, args, repeats):
    fn(*args)
    best = np.inf
    for _ in range(repeats):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def kernel_cases(rng):
    X = rng.standard_normal((512, 6))
    Z = rng.standard_normal((400, 6))
    inv_ls = np.full(6, 1.3)
    W = rng.standard_normal((512, 1, 10))
    Phi = rng.standard_normal((512, 10))
    n = 4096
    return {
        "se_kernel": (X, Z, inv_ls, 0.8),
        "tanh_head": (W, Phi, np.zeros(1), np.full(1, 5.0)),
        "quadratic_features": (rng.standard_normal((4096, 3)),),
        "pendulum_step": (rng.uniform(-4, 4, n), rng.standard_normal(n), rng.uniform(-5, 5, n),
                          np.full(n, 9.81), np.full(n, 1.0), 0.05),
    }


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for name, args in kernel_cases(rng).items():
        f_np, f_nb = getattr(K, f"{name}_numpy"), getattr(K, f"{name}_numba")
        a, b = f_np(*args), f_nb(*args)
        a, b = (np.concatenate([np.ravel(x) for x in v]) if isinstance(v, tuple) else v
                for v in (a, b))
        err = float(np.max(np.abs(a - b)))
        t_np, t_nb = _time(f_np, args, repeats), _time(f_nb, args, repeats)
        rows.append((name, t_np, t_nb, t_np / t_nb, err))
    return rows


_CHILD = """
import json, time
from rhucrl import _kernels
from rhucrl.algorithm import Learner, LearnerConfig
from rhucrl.envs import PendulumEnv
from rhucrl.gp import GpDynamicsModel, Kernel
from rhucrl.optim import OptimizerBudget
from rhucrl.types import SeedContract
env = PendulumEnv(channel="gravity_mass", horizon=40)
model = GpDynamicsModel.for_env(env, lam=1e-3, kernel=Kernel("se", (0.7,)), out_scale=[0.5, 1.0])
budget = OptimizerBudget(population=16, iterations=4, inner_population=4, inner_iterations=2,
                         particles=1)
learner = Learner(env, model, LearnerConfig(budget=budget, agent_features="quadratic"),
                  SeedContract(0))
learner.run_episode()
t = time.perf_counter()
recs = learner.run({episodes})
print(json.dumps({{"backend": _kernels.BACKEND, "seconds": time.perf_counter() - t,
                   "J_opt": [r.J_opt for r in recs]}}))
"""


def bench_end_to_end(episodes):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, RHUCRL_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", _CHILD.format(episodes=episodes)], env=env,
                             capture_output=True, text=True, check=True)
        d = json.loads(res.stdout.strip().splitlines()[-1])
        out[d["backend"]] = d
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--episodes", type=int, default=3)
    args = ap.parse_args(argv)
    print(f"{'kernel':<20}{'numpy s':>12}{'numba s':>12}{'speedup':>10}{'max diff':>12}")
    for name, t_np, t_nb, sp, err in bench_kernels(args.repeats):
        print(f"{name:<20}{t_np:>12.2e}{t_nb:>12.2e}{sp:>10.1f}{err:>12.1e}")
    e2e = bench_end_to_end(args.episodes)
    nb, np_ = e2e["numba"], e2e["numpy"]
    diff = float(np.max(np.abs(np.array(nb["J_opt"]) - np.array(np_["J_opt"]))))
    print(f"\nlearner, {args.episodes} episodes: numpy {np_['seconds']:.2f}s, "
          f"numba {nb['seconds']:.2f}s, speedup {np_['seconds'] / nb['seconds']:.2f}x, "
          f"max |dJ_opt| {diff:.1e}")


if __name__ == "__main__":
    main()
