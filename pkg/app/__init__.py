"""FLGSR Recovery - App Package"""
__version__ = "1.0.0"
