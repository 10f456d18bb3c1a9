"""Season standings predicted from per-game Siamese and gradient-boosted rankers."""

__version__ = "0.1.0"
