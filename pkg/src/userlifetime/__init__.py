"""User-lifetime labeling, feature extraction and random-forest prediction
for interaction-event logs of location-based communities."""

__version__ = "0.1.0"
