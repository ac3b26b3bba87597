"""dpsp: differential-privacy verification via self-product programs.

Pipeline: parse + typecheck a probabilistic source program, transform it
into a non-probabilistic self-product, generate Hoare verification
conditions, ground-check them over declared finite domains (and export
SMT-LIB2), and independently validate the privacy bound with an exact
distribution semantics.
"""

__version__ = "0.1.0"
