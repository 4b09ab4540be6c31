"""Numerical laboratory for stochastic Burgers and the stochastic heat equation on the torus"""
__version__ = "1.0.0"
