"""Runtime enforcement of refined session-type protocols over MAVLink links."""

__version__ = "0.1.0"
