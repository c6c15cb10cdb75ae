"""Blind compressive sensing of coded hyperspectral snapshots with shrinkage dictionaries."""

from .core import Datacube, PatchGrid, PatchSet, extract_patches, make_grid, reassemble
from .errors import DimensionError, NumericalError, RegistrationError
from .model import Hyperparams, InferenceOpts, ModelState
from .recon import ReconJob, ReconResult, denoise, inpaint, reconstruct_cs
from .sensing import CodeCube, Measurement, forward, add_noise

__version__ = "0.1.0"
