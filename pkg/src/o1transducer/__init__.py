"""O-1 and EMBR sequence-level self-training for toy transducers."""

__version__ = "0.1.0"

BLANK = 0
