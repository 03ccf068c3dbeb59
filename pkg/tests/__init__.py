"""
Tests package for the RD-JSCC platform
"""
