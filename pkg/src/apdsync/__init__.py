"""
apdsync - synchronization of two dissipative quantum oscillators driven by a
common classical optomechanical controller.
"""

__version__ = "0.1.0"
