"""Factorized neural transducer toolkit.

Sequence transduction with exact alignment-lattice loss, a standard and a
factorized transducer whose vocabulary predictor is a standalone language
model, beam decoding with optional shallow fusion, and a text-only LM
adaptation pipeline.

Subpackages/modules:
  autodiff  - float64 tensors, tape, reverse-mode gradients
  lattice   - alignment-lattice loss (compiled kernels + Python fallback)
  models    - StandardTransducer, FactorizedTransducer, RecurrentLM
  decoding  - greedy/beam search, shallow fusion, edit distance, WER
  training  - Adam loops, LM adaptation, PPL/WER evaluation
  data      - vocabulary, synthetic domains, checkpoints, archives
  cli       - `fnt` command-line interface
"""

__version__ = "0.1.0"
