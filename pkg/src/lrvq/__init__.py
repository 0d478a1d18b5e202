"""Low-rank vector quantization toolkit.

Compresses convolutional weights by learning a low-rank factor pair per
layer, clustering the low-dimensional subvectors with k-means codebooks,
fine-tuning the codebooks through the decode path, and exporting a compact
model with the linear transform folded into the codebook.
"""

__version__ = "0.1.0"
