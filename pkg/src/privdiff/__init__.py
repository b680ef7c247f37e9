"""Differentially private denoising diffusion for mixed-type tabular data."""

from .codec import TableSchema, decode, encode, fit_scaler, fit_schema, init_embeddings
from .config import RunConfig
from .diffusion import Denoiser, make_schedule

__version__ = "0.1.0"

__all__ = ["TableSchema", "decode", "encode", "fit_scaler", "fit_schema", "init_embeddings",
           "RunConfig", "Denoiser", "make_schedule"]
