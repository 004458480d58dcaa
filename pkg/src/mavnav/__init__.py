"""mavnav: a desk-scale synthetic MAV navigation stack.

Subsystems: rigid-body geometry, hexacopter simulation with IMU and
delayed pose sensing, replay-based state estimation, feedback-linearizing
flight control on quintic splines, probabilistic-roadmap route planning,
sparse Delaunay/graph-cut mapping next to a log-odds grid baseline,
synthetic stereo visual odometry, and the evaluation tooling that ties
the pieces into runnable scenarios.
"""

__version__ = "0.1.0"
