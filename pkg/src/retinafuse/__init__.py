"""Two-stream retinal disease classifier: CLAHE and vessel-segmentation
streams, eigenface PCA, kernel SVMs and weighted vote fusion."""

__version__ = "0.1.0"
