"""File-backed repositories for models, samples and mixtures."""
