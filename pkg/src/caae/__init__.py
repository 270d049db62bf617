"""Privacy-preserving activity recognition pipeline.

Core stages: an anonymizing autoencoder that maps raw inertial windows to
identity-suppressed latent blocks, and an adaptive differential PCM codec
that compresses the latent stream. A Laplace-noise baseline and an
experiment harness measure the privacy/utility trade-off.
"""

__version__ = "0.1.0"
