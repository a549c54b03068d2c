"""beetsense: unsupervised crop-stress detection on satellite image time series.

The pipeline turns raw multi-band scene time series into per-field stress
labels: preprocessing extracts cloud-free, border-eroded field patches and
splits them into 4x4 sub-patch tensors over seven acquisition dates;
convolutional autoencoders (optionally with sinusoidal date encodings) learn
latent features; k-means with k=2 separates the sub-patches; and a strict
fraction threshold aggregates sub-patch classes to field labels that are
scored against ground truth.
"""

__version__ = "0.1.0"
