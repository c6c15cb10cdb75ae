"""Denoise and inpaint a small colour crop with a dictionary learned in place.

No training set is used: the dictionary, the coefficients and the noise
level are all inferred from the damaged image itself.  Pass ``gibbs`` on
the command line to use the sampler instead of variational Bayes.
"""

import sys

import numpy as np

from blindcs.evalkit import psnr
from blindcs.recon import default_opts, denoise, inpaint

try:
    from skimage import data
    img = data.astronaut()[100:164, 180:244].astype(float)
except ImportError:   # scikit-image is only a test extra
    from blindcs.scenes import synthetic_image
    img = synthetic_image(64, 0)

kind = sys.argv[1] if len(sys.argv) > 1 else "vb"

noisy = img + 25 * np.random.default_rng(0).standard_normal(img.shape)
res = denoise(noisy, default_opts("denoise", kind))
# the learned noise std is in the normalised units the solver works in
print(f"denoise sigma=25  noisy {psnr(noisy, img, 255).psnr_mean:.2f} dB"
      f"  restored {psnr(res.estimate, img, 255).psnr_mean:.2f} dB"
      f"  ({res.runtime:.1f} s, learned noise std {1 / np.sqrt(res.trace.alpha0_mean[-1]):.3f})")

mask = (np.random.default_rng(1).random(img.shape[:2]) < 0.5).astype(float)
holes = img * mask[:, :, None]
res = inpaint(holes, mask, default_opts("inpaint", kind))
print(f"inpaint 50%       zero-filled {psnr(holes, img, 255).psnr_mean:.2f} dB"
      f"  restored {psnr(res.estimate, img, 255).psnr_mean:.2f} dB  ({res.runtime:.1f} s)")
