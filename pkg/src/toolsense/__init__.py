"""Active-perception tool-use pipeline at desk scale.

Subpackages and modules:

- ``numerics``: dense-tensor layers, SGD, finite differences, Jacobi eigensolver.
- ``dataset``: recording format, normalization, resampling, modality masking.
- ``simulator``: deterministic synthetic stand-in for the robot and kitchen.
- ``cae``: convolutional autoencoder for image-feature extraction.
- ``mtrnn``: multiple-timescales recurrent network with per-sequence latent
  initial states.
- ``explorer``: inference-time latent-state search and closed-loop rollout.
- ``analysis``: PCA of the latent space, recognition probes, modality ablation.
- ``cli``: operator-facing command surface.
"""

__version__ = "0.1.0"
