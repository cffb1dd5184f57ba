"""Document-to-text serializers and the zero-shot DocVQA prompt template."""

from __future__ import annotations

import logging
import math
from typing import Sequence

from .errors import DomainError
from .geometry import BBox

log = logging.getLogger(__name__)

PROMPT_HEADER = (
    "You are asked to answer questions asked on a document image.",
    "The answers to questions are short text spans taken verbatim from the document.",
    "This means that the answers comprise a set of contiguous text tokens present in the document.",
)
PROMPT_DIRECTIVE = (
    "Directly extract the answer to the question from the document with as few words as possible."
)


def serialize_plain(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


def default_char_cell(image_width: float, image_height: float) -> tuple[float, float]:
    """Roughly a 100 x 60 character grid per page."""
    return (image_width / 100.0, image_height / 60.0)


def space_layout(
    tokens: Sequence[str],
    boxes: Sequence[BBox],
    image_dims: tuple[float, float],
    char_cell: tuple[float, float] | None = None,
) -> tuple[list[str], int]:
    """Place tokens on a character grid; return the rows and a truncation count.

    A token goes to row ``floor(y_center / cell_h)`` starting at column
    ``floor(x1 / cell_w)``. If that collides with text already on the row it
    moves right to the first column that leaves one blank cell on either side.
    Tokens running past the row end are cut there.
    """
    if len(tokens) != len(boxes):
        raise DomainError("tokens and boxes must be parallel lists")
    width, height = image_dims
    cell_w, cell_h = char_cell or default_char_cell(width, height)
    if cell_w <= 0 or cell_h <= 0:
        raise DomainError(f"char_cell must be positive, got {(cell_w, cell_h)}")
    n_cols = max(1, math.ceil(width / cell_w))
    n_rows = max(1, math.ceil(height / cell_h))
    grid = [[" "] * n_cols for _ in range(n_rows)]
    used = [[False] * n_cols for _ in range(n_rows)]
    truncated = 0

    for token, box in zip(tokens, boxes):
        if not token:
            continue
        row = min(max(int((box.y1 + box.y2) / 2 // cell_h), 0), n_rows - 1)
        col = min(max(int(box.x1 // cell_w), 0), n_cols - 1)
        occupied = used[row]
        while col < n_cols and not _fits(occupied, col, len(token)):
            col += 1
        if col >= n_cols:
            # no free run on this row: keep the token at the row's tail so it stays visible
            col = _last_free(occupied)
        text = token[: n_cols - col]
        if len(text) < len(token):
            truncated += 1
            log.warning("token %r truncated at row end (row %d)", token, row)
        for k, ch in enumerate(text):
            grid[row][col + k] = ch
            occupied[col + k] = True

    lines = ["".join(r).rstrip() for r in grid]
    out: list[str] = []
    for line in lines:
        if line == "" and out and out[-1] == "":
            continue
        out.append(line)
    while out and out[-1] == "":
        out.pop()
    return out, truncated


def _fits(occupied: list[bool], col: int, length: int) -> bool:
    lo = max(col - 1, 0)
    hi = min(col + length + 1, len(occupied))
    return not any(occupied[lo:hi])


def _last_free(occupied: list[bool]) -> int:
    col = len(occupied)
    while col > 0 and not occupied[col - 1]:
        col -= 1
    return min(col + 1, len(occupied) - 1) if col > 0 else 0


def serialize_space(
    tokens: Sequence[str],
    boxes: Sequence[BBox],
    image_dims: tuple[float, float],
    char_cell: tuple[float, float] | None = None,
) -> str:
    lines, _ = space_layout(tokens, boxes, image_dims, char_cell)
    return "\n".join(lines)


def render_prompt(document_text: str, question: str) -> str:
    lines = [
        *PROMPT_HEADER,
        "Document:",
        document_text,
        f"Question: {question}",
        "",
        PROMPT_DIRECTIVE,
        "",
        "Answer: ",
    ]
    return "\n".join(lines)
