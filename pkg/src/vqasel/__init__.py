"""Model-informed selection of hard and diverse videos for quality labelling."""

__version__ = "0.1.0"
