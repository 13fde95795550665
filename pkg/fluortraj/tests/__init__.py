"""
Test package for fluortraj
"""