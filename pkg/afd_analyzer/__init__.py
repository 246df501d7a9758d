"""Wikipedia Articles for Deletion (AfD) outcome prediction and stance analytics."""

__version__ = "0.1.0"
