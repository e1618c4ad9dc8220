"""Beta-VAE latent embeddings, tree-ensemble classifiers and AUROC evaluation
for multi-label chest X-ray style images."""

__version__ = "0.1.0"
