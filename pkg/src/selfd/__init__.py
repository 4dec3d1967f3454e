"""Semi-supervised monocular-to-BEV waypoint driving pipeline.

Subpackages: ``core`` (types, dataset format), ``planner`` (conditional
waypoint network, losses, checkpoints), ``sim`` (procedural world, renderer,
expert), plus ``pseudo`` (hypothetical-input pseudo-labeling), ``training``
(staged self-training), ``control`` (PID waypoint follower), ``metrics``
(open/closed-loop evaluation), and ``experiments`` (scripted studies).
"""

__version__ = "0.1.0"
