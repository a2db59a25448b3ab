"""
pf-regen API Modules
Health and solver route organization
"""
