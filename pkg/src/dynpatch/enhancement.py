"""Informative patch selection and cross-granularity enhancement.

Fine patch tokens absorb temporal cues from motion-aligned object queries
through a projection-free cross-attention, are scored by the entropy of
their squared L2-normalized features, and patches scoring above the mean
are selected. Selected fine indices project into the coarse grid, and the
matching coarse tokens are refined by attending over the selected fine
tokens (positional encodings added on the attention keys/queries only) with
a residual connection.

Both attention operations ship with analytic reverse-mode gradients so the
whole path is finite-difference checkable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import PatchGridSpec, project_fine_to_coarse
from .geometry import RigidTransform, horizontal_depth
from .numerics import as_matrix, l2_normalize_rows, softmax_rows

ENTROPY_EPS = 1e-12


@dataclass
class QuerySet:
    """Object queries: embeddings plus 3-D ego-frame positions and depths."""

    embeddings: np.ndarray  # (M, C)
    positions: np.ndarray  # (M, 3)
    depths: np.ndarray  # (M,)

    def __post_init__(self):
        self.embeddings = as_matrix(self.embeddings)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.depths = np.asarray(self.depths, dtype=np.float64).ravel()
        m = self.embeddings.shape[0]
        if m == 0:
            raise ValueError("QuerySet needs at least one query")
        if self.positions.shape != (m, 3):
            raise ValueError(
                f"positions shape {self.positions.shape}, expected ({m}, 3)"
            )
        if self.depths.shape != (m,):
            raise ValueError(f"depths shape {self.depths.shape}, expected ({m},)")
        if np.any(self.depths < 0):
            raise ValueError("depths must be non-negative")
        expected = horizontal_depth(self.positions)
        if np.max(np.abs(expected - self.depths)) > 1e-6:
            raise ValueError("depths inconsistent with horizontal displacement")

    @property
    def count(self) -> int:
        return self.embeddings.shape[0]


@dataclass
class SelectionMask:
    """Selected fine-token indices and their coarse-grid projection."""

    fine_indices: np.ndarray
    coarse_indices: np.ndarray
    entropies: np.ndarray
    mean_entropy: float

    def __post_init__(self):
        self.fine_indices = np.asarray(self.fine_indices, dtype=np.int64)
        self.coarse_indices = np.asarray(self.coarse_indices, dtype=np.int64)
        self.entropies = np.asarray(self.entropies, dtype=np.float64).ravel()

    @property
    def is_empty(self) -> bool:
        return self.fine_indices.size == 0


def align_queries(prev: QuerySet, ego_motion: RigidTransform) -> QuerySet:
    """Carry queries into the current ego frame; embeddings pass through."""
    positions = ego_motion.apply(prev.positions)
    return QuerySet(
        embeddings=prev.embeddings.copy(),
        positions=positions,
        depths=horizontal_depth(positions),
    )


def temporal_enhance(f_p: np.ndarray, q_hat: np.ndarray) -> np.ndarray:
    """Cross-attention of patch features over query embeddings.

    softmax(f_p q_hat^T / sqrt(C)) q_hat, with no learned projections;
    every output row is a convex combination of query embedding rows.
    """
    f_p = as_matrix(f_p)
    q_hat = as_matrix(q_hat)
    if f_p.shape[1] != q_hat.shape[1]:
        raise ValueError(
            f"feature dims differ: patches {f_p.shape} vs queries {q_hat.shape}"
        )
    c = f_p.shape[1]
    weights = softmax_rows(f_p @ q_hat.T / np.sqrt(c))
    return weights @ q_hat


def _softmax_backward(weights: np.ndarray, grad_weights: np.ndarray) -> np.ndarray:
    # Per row: dS = A * (dA - sum(dA * A)), the softmax Jacobian product.
    inner = np.sum(grad_weights * weights, axis=1, keepdims=True)
    return weights * (grad_weights - inner)


def temporal_enhance_grad(
    f_p: np.ndarray, q_hat: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of temporal_enhance contracted with `upstream`.

    Returns (d_f_p, d_q_hat).
    """
    f_p = as_matrix(f_p)
    q_hat = as_matrix(q_hat)
    upstream = as_matrix(upstream)
    if upstream.shape != (f_p.shape[0], f_p.shape[1]):
        raise ValueError(
            f"upstream shape {upstream.shape}, expected {(f_p.shape[0], f_p.shape[1])}"
        )
    c = f_p.shape[1]
    scale = 1.0 / np.sqrt(c)
    weights = softmax_rows(f_p @ q_hat.T * scale)
    grad_weights = upstream @ q_hat.T
    grad_scores = _softmax_backward(weights, grad_weights)
    d_f_p = grad_scores @ q_hat * scale
    d_q_hat = grad_scores.T @ f_p * scale + weights.T @ upstream
    return d_f_p, d_q_hat


def entropy_scores(f_q: np.ndarray) -> np.ndarray:
    """Per-row entropy of squared L2-normalized features.

    Squaring the normalized components yields a probability vector per row;
    entries are clamped at ENTROPY_EPS inside the log. All-zero rows score 0.
    """
    f_q = as_matrix(f_q)
    normalized = l2_normalize_rows(f_q)
    p = np.maximum(normalized**2, ENTROPY_EPS)
    scores = -np.sum(p * np.log(p), axis=1)
    zero_rows = ~np.any(f_q != 0.0, axis=1)
    scores[zero_rows] = 0.0
    return scores


def adaptive_select(entropies) -> SelectionMask:
    """Indices whose entropy strictly exceeds the mean; may be empty."""
    h = np.asarray(entropies, dtype=np.float64).ravel()
    if h.size < 1:
        raise ValueError("adaptive_select: need at least one entropy score")
    mean = float(h.mean())
    fine = np.nonzero(h > mean)[0]
    return SelectionMask(
        fine_indices=fine,
        coarse_indices=np.empty(0, dtype=np.int64),
        entropies=h,
        mean_entropy=mean,
    )


def project_selection(
    mask: SelectionMask, fine: PatchGridSpec, coarse: PatchGridSpec
) -> SelectionMask:
    """Fill in the deduplicated, sorted coarse indices for a fine selection."""
    coarse_idx = sorted(
        {project_fine_to_coarse(int(i), fine, coarse) for i in mask.fine_indices}
    )
    return SelectionMask(
        fine_indices=mask.fine_indices,
        coarse_indices=np.asarray(coarse_idx, dtype=np.int64),
        entropies=mask.entropies,
        mean_entropy=mask.mean_entropy,
    )


def cgfe(
    f_l_sel: np.ndarray,
    f_n_sel: np.ndarray,
    pe_l: np.ndarray,
    pe_n: np.ndarray,
) -> np.ndarray:
    """Refine selected coarse tokens with selected fine tokens.

    softmax((f_l + pe_l)(f_n + pe_n)^T / sqrt(C)) aggregates the raw fine
    features (values carry no positional encoding), and the result is added
    back onto f_l as a residual.
    """
    f_l_sel = as_matrix(f_l_sel)
    f_n_sel = as_matrix(f_n_sel)
    pe_l = as_matrix(pe_l)
    pe_n = as_matrix(pe_n)
    if f_l_sel.shape[0] < 1 or f_n_sel.shape[0] < 1:
        raise ValueError("cgfe: both selections must be nonempty")
    c = f_l_sel.shape[1]
    for name, m in (("f_n_sel", f_n_sel), ("pe_l", pe_l), ("pe_n", pe_n)):
        if m.shape[1] != c:
            raise ValueError(f"{name} has {m.shape[1]} columns, expected {c}")
    if pe_l.shape != f_l_sel.shape:
        raise ValueError(f"pe_l shape {pe_l.shape} != f_l shape {f_l_sel.shape}")
    if pe_n.shape != f_n_sel.shape:
        raise ValueError(f"pe_n shape {pe_n.shape} != f_n shape {f_n_sel.shape}")
    weights = softmax_rows((f_l_sel + pe_l) @ (f_n_sel + pe_n).T / np.sqrt(c))
    enhanced = weights @ f_n_sel
    return f_l_sel + enhanced


def cgfe_grad(
    f_l_sel: np.ndarray,
    f_n_sel: np.ndarray,
    pe_l: np.ndarray,
    pe_n: np.ndarray,
    upstream: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of cgfe's output contracted with `upstream`.

    Returns (d_f_l_sel, d_f_n_sel). The positional encodings are constants.
    """
    f_l_sel = as_matrix(f_l_sel)
    f_n_sel = as_matrix(f_n_sel)
    pe_l = as_matrix(pe_l)
    pe_n = as_matrix(pe_n)
    upstream = as_matrix(upstream)
    if upstream.shape != f_l_sel.shape:
        raise ValueError(
            f"upstream shape {upstream.shape}, expected {f_l_sel.shape}"
        )
    c = f_l_sel.shape[1]
    scale = 1.0 / np.sqrt(c)
    q = f_l_sel + pe_l
    k = f_n_sel + pe_n
    weights = softmax_rows(q @ k.T * scale)
    # out = f_l + weights @ f_n
    grad_weights = upstream @ f_n_sel.T
    grad_scores = _softmax_backward(weights, grad_weights)
    d_f_l = upstream + grad_scores @ k * scale
    d_f_n = grad_scores.T @ q * scale + weights.T @ upstream
    return d_f_l, d_f_n


def selection_dump_lines(frame: int, view: int, mask: SelectionMask) -> list[str]:
    """Text block for one (frame, view) selection."""
    return [
        f"frame={frame} view={view}",
        "fine: " + " ".join(str(int(i)) for i in mask.fine_indices),
        "coarse: " + " ".join(str(int(i)) for i in mask.coarse_indices),
    ]


def parse_selection_dump(text: str) -> dict[tuple[int, int], tuple[list[int], list[int]]]:
    """Inverse of selection_dump_lines over a whole file."""
    out: dict[tuple[int, int], tuple[list[int], list[int]]] = {}
    key: tuple[int, int] | None = None
    fine: list[int] = []
    coarse: list[int] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("frame="):
            if key is not None:
                out[key] = (fine, coarse)
            head, view_part = line.split()
            key = (int(head.split("=")[1]), int(view_part.split("=")[1]))
            fine, coarse = [], []
        elif line.startswith("fine:"):
            fine = [int(t) for t in line[len("fine:") :].split()]
        elif line.startswith("coarse:"):
            coarse = [int(t) for t in line[len("coarse:") :].split()]
        else:
            raise ValueError(f"unrecognized selection dump line: {line!r}")
    if key is not None:
        out[key] = (fine, coarse)
    return out
