"""Knowledge-adapter toolkit: a small multilingual encoder enhanced with a
bottleneck-adapter set, attention fusion, contrastive knowledge integration,
and cosine-retrieval evaluation on multilingual knowledge graphs."""

__version__ = "0.1.0"
