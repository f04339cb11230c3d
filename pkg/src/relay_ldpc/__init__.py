"""LDPC code design and simulation for decode-and-forward over the Gaussian degraded relay channel."""

__version__ = "0.1.0"
