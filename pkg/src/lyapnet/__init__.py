"""Train small networks under per-layer Lyapunov spectral caps and certify the cascade."""

__version__ = "0.1.0"
