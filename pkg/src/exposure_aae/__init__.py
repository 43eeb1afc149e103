"""Adversarial-autoencoder forecasting of physiological response to air pollution."""

__version__ = "0.1.0"
