"""Stored reference targets for the bench subcommand.

Each row records the experimental setting it measures, the expected value,
and the comparison tolerance.  Analytic rows (identity baselines, bounds,
workload-as-strategy) carry tight tolerances; optimizer rows allow 1-5%
slack for local-minima variance across restarts.  Values are version-pinned:
changing any of them is a breaking change for the bench command.
"""

# all 2-way marginals on (2, 5, 50, 100), L1 noise, unit-noise Q
WORKED_EXAMPLE = {
    "domain": (2, 5, 50, 100),
    "rows": [
        # (name, target Q, relative tolerance)
        ("identity", 300000.0, 1e-9),     # exact: 6 * N
        ("workload", 206964.0, 0.01),     # exact: 36 * rank
        ("kron", 213270.0, 0.02),
        ("plus", 85070.0, 0.02),
        ("marginal", 62886.0, 0.01),
    ],
    "max_seconds": 120.0,
}

# 1-D range-query families, epsilon = 1, Laplace noise, RMSE scale
ONE_D_LAPLACE = {
    "sizes": (64, 256),
    "identity_rmse": {64: 6.63, 256: 13.11},   # tol 0.5% (analytic)
    "identity_rtol": 0.005,
    "opt0_rmse": {64: 5.55, 256: 8.07},        # measured must be <= 1.05x
    "opt0_headroom": 1.05,
    "svdb_rmse": {64: 3.22, 256: 4.07},        # tol 1% (analytic)
    "svdb_rtol": 0.01,
    "max_seconds_per_size": 180.0,
}

# 1-D families, epsilon = 1, delta = 1e-6, Gaussian noise
ONE_D_GAUSSIAN = {
    "sizes": (64, 256),
    "families": ("allrange", "prefix", "width32", "permuted"),
    "rmse_vs_svdb_cap": 1.02,       # RMSE within 2% of the bound
    "permuted_match_rtol": 1e-3,    # permuted Q equals unpermuted Q
}

# all exactly-k-way marginals, d = 8, n_i = 10: identity/marginal RMSE ratio
MARGINALS_RATIOS = {
    "domain": (10,) * 8,
    "rows": [
        # (k, expected ratio, relative tolerance)
        (2, 39.06, 0.05),
        (8, 1.00, 0.01),
    ],
}

# union-of-products separation: prefix-range cross products on (100, 100)
SEPARATION = {
    "domain": (100, 100),
    "kron_q": 33385.0,
    "plus_q": 14252.0,
    "q_rtol": 0.05,
    "min_ratio": 2.2,
}

PERMUTED_SEED = 20240501
