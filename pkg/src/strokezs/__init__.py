"""Zero-shot character recognition from five-class stroke sequences.

Images of glyphs are decoded into stroke sequences by a residual-CNN
encoder and Transformer decoder, rectified against a lexicon by edit
distance, and resolved to characters; ambiguous (one-to-many) sequences
are settled by matching pooled features against clean support renderings.
"""

__version__ = "0.1.0"
