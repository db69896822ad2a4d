"""Q-matrices shared across the test modules."""

from polydina.core import QMatrix

# Two attributes; a unit item for the first, two unit items for the second,
# and a two-category item whose first category needs both attributes.
SEQ_ONE_GATE = QMatrix.sequential([[[1, 0]], [[0, 1]], [[0, 1]], [[1, 1], [1, 0]]])

# One unit item per attribute, then two items whose first categories need both.
SEQ_TWO_GATES = QMatrix.sequential([[[1, 0]], [[0, 1]], [[1, 1], [1, 0]], [[1, 1]]])

# Every attribute is the first category of only two items, but the second
# categories of the other two items require it as well.
SEQ_SECOND_CATEGORY_COVER = QMatrix.sequential(
    [[[1, 0], [0, 1]], [[1, 0], [0, 1]], [[0, 1], [1, 0]], [[0, 1], [1, 0]]]
)

# Two-category unit items with swapped second categories plus three
# one-category items needing both attributes.
SEQ_SECOND_CATEGORY_SEPARATES = QMatrix.sequential(
    [[[1, 0], [0, 1]], [[0, 1], [1, 0]], [[1, 1]], [[1, 1]], [[1, 1]]]
)

# GPDINA designs.
GPD_IDENTIFIABLE = QMatrix.gpdina([[1, 0], [0, 1], [1, 1], [1, 1], [1, 1], [1, 0], [0, 1]], H=[2, 1, 2, 1, 2, 1, 2])
GPD_FEW_ITEMS = QMatrix.gpdina([[1, 0], [1, 0], [0, 1]], H=[2, 2, 2])
GPD_TWO_ITEMS_FOR_FIRST = QMatrix.gpdina([[1, 0], [1, 1], [0, 1], [0, 1], [0, 1]], H=[2, 2, 1, 2, 1])
GPD_UNSEPARATED = QMatrix.gpdina([[1, 0], [0, 1], [1, 1], [1, 1], [1, 1]], H=[1, 1, 2, 2, 2])
GPD_INCOMPLETE = QMatrix.gpdina([[1, 1], [0, 1], [1, 1], [0, 1]], H=[2, 1, 2, 1])
