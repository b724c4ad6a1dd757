"""Diamond SiV cavity-QED network node simulator."""

__version__ = "1.0.0"
