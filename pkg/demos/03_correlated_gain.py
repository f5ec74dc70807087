"""Why the cross-covariance matters: a scalar example.

For x[k+1] = a x[k] + w[k] observed as y = x + v with cov(w[k], v[k+1]) = m,
the filter that accounts for m reaches the correlated Riccati fixed point,
while the filter that ignores it settles at a larger error.
"""

import numpy as np

from deepdvl.ekf import gain_correlated, run_linear_filter

a, q, r, m, n = 0.95, 1.0, 1.0, 0.5, 50_000
rng = np.random.default_rng(0)
wv = rng.standard_normal((n, 2)) @ np.linalg.cholesky([[q, m], [m, r]]).T
x = np.zeros(n + 1)
for k in range(n):
    x[k + 1] = a * x[k] + wv[k, 0]
x, y = x[1:], x[1:] + wv[:, 1]

for label, m_filter in (("aware  (M = m)", m), ("neglect (M = 0)", 0.0)):
    xs, P = run_linear_filter(np.array([[a]]), np.array([[q]]), np.eye(1), np.array([[r]]),
                              np.array([[m_filter]]), y[:, None], np.zeros(1), np.eye(1))
    mse = np.mean((xs[1000:, 0] - x[1000:]) ** 2)
    print(f"{label}: empirical MSE {mse:.4f}, filter variance {P[-1, 0, 0]:.4f}")

P, H, R = 2.0 * np.eye(1), np.eye(1), np.eye(1)
print("\ngain with M = 0  :", gain_correlated(P, H, R, np.zeros((1, 1)))[0, 0])
print("gain with M = 0.5:", gain_correlated(P, H, R, np.array([[0.5]]))[0, 0])
