"""Self-supervised further-pretraining toolkit.

Barlow Twins pre-training (with an optional sparse-projector penalty),
two-stage further pre-training with full or partial encoder unfreezing,
fine-tuning and linear-probe harnesses, and a multi-run statistical
evaluation layer. Runs end-to-end at desk scale on synthetic data and on
manifest-driven image datasets.
"""

__version__ = "0.1.0"
