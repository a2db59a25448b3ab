"""
Test suite for pf-regen
"""
