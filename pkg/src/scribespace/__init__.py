"""Co-writing engine for revising science text across two quality axes.

Drafts live in a per-segment version graph; agents expand, score, and merge
them; every action is an event so sessions replay deterministically. The
offline mock provider makes the whole engine runnable with no network.
"""

__version__ = "0.1.0"
