"""Two-style text style transfer with reverse attention and conditional
layer normalization, plus its automatic-evaluation toolkit."""

__version__ = "0.1.0"
