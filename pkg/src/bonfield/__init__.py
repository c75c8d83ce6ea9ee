"""Block inclusion-exclusion bounds for m-dependent random fields on Z^d."""

__version__ = "0.1.0"
