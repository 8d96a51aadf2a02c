"""Congestion pricing for urban air mobility networks.

A toll-setting planner anticipates how operators reschedule and reroute
flights, using a learned surrogate of the operators' optimal cost.
"""

__version__ = "0.1.0"
