"""Cold-start recommender: attention-fused multimodal features, graph
convolution over the interaction graph, and contrastive training."""

__version__ = "0.1.0"
