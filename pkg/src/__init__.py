"""
FinRay Tactile Lab - synthetic tactile sensing for a Fin Ray soft finger
Simulator, image pipeline, learners and experiment runner.
"""

__version__ = "1.0.0"
__author__ = "FinRay Tactile Lab Team"
