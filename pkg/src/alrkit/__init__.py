"""alrkit: airway-to-lung-ratio inference pipeline on synthetic phantoms."""

__version__ = "0.1.0"
