"""Physics-informed remote PPG: oscillator filters, ZAS, ASF and a gated TCN."""

__version__ = "0.1.0"
