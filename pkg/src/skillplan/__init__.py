"""Search-based task planning over parameterized skills with learned
skill-effect models."""

__version__ = "0.1.0"
