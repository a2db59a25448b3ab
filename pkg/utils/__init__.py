"""
pf-regen Utilities
Counter-based random streams and the block worker pool
"""
