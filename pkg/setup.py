from setuptools import setup

# This is a minimal setup.py that defers to pyproject.toml
setup()
