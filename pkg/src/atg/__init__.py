"""Desk-scale active object tracking lab.

A 2-D raycast world with a scripted walking target, an actor-critic tracker
trained from pixels, a proportional camera-control baseline, and an
evaluation/saliency toolkit. Entry point: the ``atg`` command.
"""

__version__ = "0.1.0"
