"""Multimodal ECG representation learning.

Subpackages by concern:

- :mod:`merl.corpus` — paired ECG/report ingestion, repair, curation,
  deterministic synthetic corpora, and split management.
- :mod:`merl.encoders` — 1D ResNet / ViT signal backbones, the offline text
  encoder, shared-space projectors, and checkpoint I/O.
- :mod:`merl.alignment` — the cross-modal and uni-modal contrastive losses
  and the pretraining loop.
- :mod:`merl.augmentation` — input-level augmentations used only as ablation
  foils for latent dropout.
- :mod:`merl.zeroshot` — prompt embedding, similarity scoring, macro AUC.
- :mod:`merl.ckepe` — LLM-assisted, knowledge-base-verified prompt building.
- :mod:`merl.harness` — linear probing, domain transfer, embedding export,
  and experiment orchestration (also exposed as the ``merl`` CLI).
"""

__version__ = "0.1.0"

from . import alignment, augmentation, ckepe, config, corpus, encoders, errors, harness, zeroshot

__all__ = [
    "alignment",
    "augmentation",
    "ckepe",
    "config",
    "corpus",
    "encoders",
    "errors",
    "harness",
    "zeroshot",
    "__version__",
]
