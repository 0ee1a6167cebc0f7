"""Road-link trajectory synthesis toolkit.

Pipeline: build a road network and trip corpus (or generate a synthetic
world), pretrain a small decoder-only transformer with gravity-weighted
trajectory sampling and connectivity-masked logits, optionally fine-tune it
against trip-length preference feedback, then generate synthetic corpora
and score them against the real data with a distributional metric battery.
"""

__version__ = "0.1.0"
