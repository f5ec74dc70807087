"""Four-beam DVL geometry and the least-squares velocity solution.

A body velocity is projected onto the four Janus beams, corrupted with the
default per-beam bias, scale factor and white noise, and solved back with
least squares. Dropping one beam still leaves the velocity observable.
"""

import numpy as np

from deepdvl.dvl import DvlBeams, beams_from_velocity, corrupt_beams, ls_covariance, ls_velocity, make_geometry
from deepdvl.ekf import NoiseModel

geom = make_geometry()
print("beam direction matrix (rows are beam unit vectors):")
print(np.round(geom.direction_matrix, 4))

v_true = np.array([1.5, 0.05, 0.02])
beams = beams_from_velocity(v_true, geom)
print("\nnoiseless beams:", beams)
print("LS velocity    :", ls_velocity(beams, geom))

noise = NoiseModel()
noisy = corrupt_beams(beams, noise.dvl_beam_bias, noise.dvl_beam_scale, noise.dvl_beam_sigma, rng_seed=0)
print("\nnoisy beams    :", noisy)
print("LS velocity    :", ls_velocity(noisy, geom))
print("LS std (white noise only):", np.sqrt(np.diag(ls_covariance(geom, noise.dvl_beam_sigma))))

ping = DvlBeams(0.0, noisy, validity=[True, True, True, False])
print("\nthree valid beams:", ls_velocity(ping, geom))
