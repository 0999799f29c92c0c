"""
Test suite for dispersim

Set DISPERSIM_SLOW=1 to include the three-dimensional runs.
"""
