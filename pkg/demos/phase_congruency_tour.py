"""A short tour of the phase congruency maps the matcher works on.

Run:  python3 demos/phase_congruency_tour.py
Needs scikit-image for the sample image.
"""

import numpy as np
from skimage import data

from pcwlad.phasecong import PcParams, build_filter_bank, compute_pc

img = data.camera().astype(float) / 255.0
print("image", img.shape, "range", img.min(), img.max())

# The filter bank lives in the frequency domain: 4 scales x 6 orientations.
bank = build_filter_bank(img.shape[1], img.shape[0])
print("filters:", bank.filters.shape)

# %% The map is nearly blind to contrast and brightness. Flat regions such
# as the sky are the exception: there the small stabilising constant is not
# negligible next to the filter amplitudes.
pc = compute_pc(img, bank=bank).pc
pc_dim = compute_pc(0.3 * img + 0.4, bank=bank).pc
print("max |PC(img) - PC(0.3 img + 0.4)| =", np.abs(pc - pc_dim).max())

# Inversion only flips the sign of every zero-mean filter response, and the
# energy term ignores that sign, so the map is unchanged.
pc_inv = compute_pc(1.0 - img, bank=bank).pc
print("mean |PC(img) - PC(1 - img)|     =", np.abs(pc - pc_inv).mean())

# %% The Rayleigh noise floor trims weak responses everywhere.
pc_ray = compute_pc(img, PcParams(noise_mode="rayleigh")).pc
print("mean PC  off: %.4f  rayleigh: %.4f" % (pc.mean(), pc_ray.mean()))
print("pixels above 0.3  off: %d  rayleigh: %d" % ((pc > 0.3).sum(), (pc_ray > 0.3).sum()))
