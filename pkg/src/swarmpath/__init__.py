"""Decentralised subgoal path formation for robot swarms, with an A* baseline."""

__version__ = "0.1.0"
