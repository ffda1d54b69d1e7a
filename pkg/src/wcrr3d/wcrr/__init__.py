from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .filters import (Cascade, DegenerateFilterError, FilterBank, normalize,
                      spectral_norm_fft)
from .model import WcrrModel, wcrr_grad, wcrr_hvp, wcrr_value
from .potentials import (ALPHA_EPS, N_KNOTS, SIGMA_MAX, SIGMA_MIN, PotentialParams, alpha,
                         d2phi, dphi, huber, phi, shared_potential)

__all__ = [
    "Cascade", "DegenerateFilterError", "FilterBank", "normalize", "spectral_norm_fft",
    "WcrrModel", "wcrr_grad", "wcrr_hvp", "wcrr_value", "PotentialParams", "alpha",
    "huber", "phi", "dphi", "d2phi", "shared_potential",
    "load_checkpoint", "read_manifest", "save_checkpoint",
    "ALPHA_EPS", "N_KNOTS", "SIGMA_MAX", "SIGMA_MIN",
]
