"""Small, fully inspectable trainer for contrastive + ranking passage scoring."""

__version__ = "0.1.0"
