"""Per-pixel hyperspectral classification with MiniROCKET, HDC-MiniROCKET and a compact 1D CNN."""

__version__ = "0.1.0"
