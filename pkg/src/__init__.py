"""
Staircase Retraction Probe

Modules are imported by bare name with src/ on the path, as main.py and the
test scripts do.
"""
