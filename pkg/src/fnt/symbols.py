"""Reserved symbol ids shared by vocabulary, models, and lattice.

The joint output axis puts blank at index 0 and vocabulary tokens at their
ids 1..V.  bos is only ever an input to predictors; eos is predicted by
the language model head but never appears in transducer targets.
"""

BLANK_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
NUM_RESERVED = 4
