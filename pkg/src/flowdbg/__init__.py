"""flowdbg: multi-mode remote debugging for event-driven IIoT workflows."""

__version__ = "0.1.0"
