"""Forward and inverse spectral tools for coupled-channel Sturm-Liouville problems."""
