"""Large wireless localization model: channel synthesis, self-supervised pretraining and localization heads."""

__version__ = "0.1.0"
