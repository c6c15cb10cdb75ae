"""Simulate a coded snapshot and look at how the code acts on one patch.

A CASSI code is a single binary mask that the disperser shifts by one row
per wavelength, so channel ``j`` of the code cube is the base mask read
from row ``j`` onward.  The snapshot is the code-weighted sum over
channels.  Cut into patches, each measurement patch is a short row of
diagonal code blocks applied to the matching datacube patch.
"""

import numpy as np

from blindcs.core import extract_patches, make_grid
from blindcs.scenes import synthetic_cube
from blindcs.sensing import build_patch_operators, compression_ratio, forward, random_cassi_code

cube = synthetic_cube(32, 32, 8, seed=0)
code = random_cassi_code(32, 32, 8, seed=1)
snap = forward(cube, code)
print("datacube", cube.data.shape, "-> snapshot", snap.image.shape,
      "compression", compression_ratio(cube.n_channels))

# the shift convention: channel 3 is the base mask moved up by three rows
print("channel 3 equals channel 0 shifted by 3 rows:",
      np.array_equal(code.codes[:-3, :, 3], code.codes[3:, :, 0]))

grid = make_grid((32, 32), 8, 2)
ops = build_patch_operators(code, grid)
X = extract_patches(cube, grid=grid)
M = extract_patches(snap.image, grid=grid)
psi = ops[10].to_dense()
print(f"{grid.n_patches} patches; Psi_10 is {psi.shape[0]} x {psi.shape[1]} with {ops[10].nnz} nonzeros")
print("Psi_10 x_10 reproduces the measurement patch:",
      np.allclose(psi @ X.vectors[:, 10], M.vectors[:, 10]))
