"""Receptor sequence generation conditioned on an MHC + peptide context.

Library layout:

- ``vocab``     token alphabet, encoding/decoding of residue strings
- ``physchem``  per-residue physicochemical descriptors (raw and z-scored)
- ``nn``        numpy building blocks with exact manual backprop
- ``model``     gated embedding fusion + Pre-LN encoder/decoder, loss + grads
- ``checkpoint`` binary parameter container
- ``train``     AdamW, cosine schedule, early stopping, training loop
- ``generate``  temperature-beam search, legality filter, ranking, selection
- ``metrics``   Levenshtein, Smith-Waterman similarity, LCS, batch reports
- ``baseline``  nearest-neighbour retrieval baseline
- ``data``      TSV ingestion and context-level splits
- ``report``    matplotlib figures for evaluation/training outputs
- ``cli``       single entry point with subcommands
"""

__version__ = "0.1.0"
