# Ocular region detector: simultaneous iris and periocular detection
__version__ = "1.0.0"
