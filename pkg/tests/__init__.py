"""
Unit tests. Source modules live in ../source and are imported by their bare names.
"""
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                "source"))
