"""Image I/O, degradation, metrics and the training loop."""
