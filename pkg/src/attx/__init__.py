"""Attentive cross-modal connections (AttX) between ECG and EDA 1-D CNN streams,
with a small numpy autodiff engine, preprocessing, and LOSO experiment tooling."""

__version__ = "0.1.0"
