"""
Command Line Interface Module for dispersim
"""
