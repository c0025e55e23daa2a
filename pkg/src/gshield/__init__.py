"""gshield: a desk-scale testbed for splatting computation-cost attacks and defenses."""

__version__ = "0.1.0"
