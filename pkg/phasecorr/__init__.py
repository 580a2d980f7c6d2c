# This file makes the phasecorr directory a Python package
__version__ = "0.1.0"
