"""
Gaussian maximum likelihood and the likelihood-ratio baseline
=============================================================

"""

import numpy as np

from sem_el import gaussian_ml, sem
from sem_el.weights import build_grid_queen, row_standardize

w = row_standardize(build_grid_queen(13, 13))
design = sem.trend_design(w)
truth = sem.Theta([3.5], 0.15, 1.0)
y = sem.simulate(design, truth, "normal", seed=7).y

fit = gaussian_ml.mle(design, y)
print("theta_hat:", fit.theta_hat)
print("log-likelihood at the MLE:", round(fit.loglik, 4))

# The concentrated likelihood over the rho grid peaks near rho_hat.
rho, lc = np.array(fit.rho_profile).T
print("grid argmax:", rho[np.argmax(lc)])

# LR test of the true point, and of the MLE itself (statistic exactly 0).
print(gaussian_ml.lr_test(design, y, truth, 0.95, fit=fit))
print("LR at theta_hat:", gaussian_ml.lr_statistic(design, y, fit.theta_hat, fit=fit))
