"""Vehicle video and data recording, streaming and relay."""

__version__ = "0.1.0"
