"""Variable selection and inference from diffusion-generated synthetic replicates."""

__version__ = "0.1.0"
