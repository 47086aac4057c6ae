"""Temporal predictive coding world models with latent imagination."""

from ._malloc import tune_allocator

tune_allocator()
