"""
Outcome disparity estimation by race with BISG and BIRDiE
"""

__version__ = '0.1.0'
