"""Discover VoWiFi ePDG endpoints, probe them with IKEv2 and classify geoblocking."""

__version__ = "0.1.0"
