# Core logic for MoodNet
__version__ = "1.0"
