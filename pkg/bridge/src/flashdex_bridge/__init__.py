"""flashdex-bridge: export sentence embeddings from a flashdex corpus store
into the FDXE embedding file the retrieval engine consumes."""

__version__ = "0.1.0"
