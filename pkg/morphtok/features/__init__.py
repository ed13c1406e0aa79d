"""
Feature modules for Morphtok
"""
