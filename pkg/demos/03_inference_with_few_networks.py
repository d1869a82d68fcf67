"""Testing a hypothesis about an average statistic from a handful of networks.

Each network yields one approximately normal, independent average.  A
sign-flip randomization test and a t-test on those averages give valid
inference, and the normality itself can be checked by Monte Carlo.
"""
import numpy as np

from stratnet import LatentParams, ModelSpec, compute_stat, im_t_test, mc_clt, randomization_test, simulate

spec = ModelSpec(d=1, T=1, kappa=3.0, s_kind="lagged_link_and_common_max",
                 v_params=LatentParams((1.0, 1.0), (), 0.0), v0_params=LatentParams((0.1, 0.1), (), 0.0))

clt = mc_clt(spec, 300, 500, "degree", seed=0, threads=4)
print(f"sqrt(n)-scaled average degree over 500 networks: KS distance to normal {np.round(clt.ks_stat, 3).tolist()}")

means = []
for g in range(10):
    prims, series = simulate(spec, 300, seed=100 + g)
    means.append(compute_stat(spec, prims, series, "degree").mean(axis=0))
means = np.array(means)
truth = clt.moment_draws.mean(axis=0) / np.sqrt(clt.n)  # Monte Carlo mean degree
print(f"ten network averages (period 0, period 1):\n{np.round(means, 3)}")
for label, mu0 in (("true mean", truth), ("true mean + 0.3", truth + 0.3)):
    p_r = randomization_test(means, mu0, draws=9999, seed=1)
    p_t = im_t_test(means[:, 1], mu0[1])  # the t-test is for one scalar average
    print(f"H0 = {label:<16} randomization p (joint) = {p_r:.4f}, t-test p (period 1) = {p_t:.4f}")
