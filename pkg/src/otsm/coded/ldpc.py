"""Regular LDPC codes: construction, systematic encoding, soft decoding.

Built-in codes come from a deterministic progressive-edge-growth
placement of a (3, 6) or (3, 12) regular graph (rates 1/2 and 3/4);
arbitrary parity matrices load from the standard alist text format.
Decoding is the plain sum-product schedule on the Tanner graph with
prefix/suffix products inside each check, so zero-magnitude messages
never hit a division.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

LLR_CLIP = 30.0
_TANH_LIMIT = 1.0 - 1e-15


@dataclass
class LdpcCode:
    """Sparse parity-check code with a derived systematic encoder."""

    parity: sp.csr_matrix
    info_positions: np.ndarray
    parity_positions: np.ndarray
    encoder_matrix: np.ndarray  # parity bits = encoder_matrix @ info bits (mod 2)
    _check_vars: np.ndarray = field(repr=False)
    _check_mask: np.ndarray = field(repr=False)

    @property
    def block_length(self) -> int:
        return self.parity.shape[1]

    @property
    def num_checks(self) -> int:
        return self.parity.shape[0]

    @property
    def message_length(self) -> int:
        return len(self.info_positions)

    @property
    def rate(self) -> float:
        return self.message_length / self.block_length

    def generator(self) -> np.ndarray:
        """Dense systematic generator, orthogonal to the parity matrix."""
        g = np.zeros((self.message_length, self.block_length), dtype=np.uint8)
        g[np.arange(self.message_length), self.info_positions] = 1
        g[:, self.parity_positions] = self.encoder_matrix.T
        return g


def _gf2_row_reduce(dense: np.ndarray):
    """Row-reduce over GF(2); returns (reduced rows, pivot columns)."""
    h = dense.copy().astype(np.uint8)
    m, n = h.shape
    pivots = []
    row = 0
    for col in range(n):
        hits = np.nonzero(h[row:, col])[0]
        if hits.size == 0:
            continue
        target = row + hits[0]
        if target != row:
            h[[row, target]] = h[[target, row]]
        others = np.nonzero(h[:, col])[0]
        others = others[others != row]
        h[others] ^= h[row]
        pivots.append(col)
        row += 1
        if row == m:
            break
    return h[:row], np.array(pivots, dtype=int)


def _build_code(parity: sp.csr_matrix) -> LdpcCode:
    parity = parity.tocsr().astype(np.uint8)
    reduced, pivots = _gf2_row_reduce(parity.toarray())
    n = parity.shape[1]
    info = np.setdiff1d(np.arange(n), pivots)
    encoder = reduced[:, info]
    check_vars, check_mask = _padded_adjacency(parity)
    return LdpcCode(
        parity=parity,
        info_positions=info,
        parity_positions=pivots,
        encoder_matrix=encoder,
        _check_vars=check_vars,
        _check_mask=check_mask,
    )


def _padded_adjacency(parity: sp.csr_matrix):
    degrees = np.diff(parity.indptr)
    width = int(degrees.max())
    m = parity.shape[0]
    vars_padded = np.zeros((m, width), dtype=int)
    mask = np.zeros((m, width), dtype=bool)
    for i in range(m):
        cols = parity.indices[parity.indptr[i] : parity.indptr[i + 1]]
        vars_padded[i, : cols.size] = cols
        mask[i, : cols.size] = True
    return vars_padded, mask


def peg_parity_matrix(n: int, var_degree: int, check_degree: int) -> sp.csr_matrix:
    """Deterministic progressive-edge-growth placement of a regular graph.

    Each variable's first edge goes to the lightest check; later edges
    go to the lightest check outside (or failing that, deepest inside)
    the breadth-first neighbourhood, which keeps short cycles away.
    Ties break on the lowest check index, so the graph is reproducible.
    """
    if (n * var_degree) % check_degree != 0:
        raise ValueError("degrees are inconsistent with the block length")
    m = n * var_degree // check_degree
    check_deg = np.zeros(m, dtype=int)
    check_nbrs: list[list[int]] = [[] for _ in range(m)]
    var_nbrs: list[list[int]] = [[] for _ in range(n)]

    def bfs_depths(v: int) -> np.ndarray:
        depth = np.full(m, -1, dtype=int)
        frontier = list(var_nbrs[v])
        for c in frontier:
            depth[c] = 0
        level = 0
        seen_vars = {v}
        while frontier:
            next_vars = set()
            for c in frontier:
                next_vars.update(check_nbrs[c])
            next_vars -= seen_vars
            seen_vars |= next_vars
            level += 1
            frontier = []
            for u in next_vars:
                for c in var_nbrs[u]:
                    if depth[c] == -1:
                        depth[c] = level
                        frontier.append(c)
        return depth

    for v in range(n):
        for _ in range(var_degree):
            if not var_nbrs[v]:
                candidates = np.arange(m)
            else:
                depth = bfs_depths(v)
                unreached = np.nonzero(depth == -1)[0]
                candidates = unreached if unreached.size else np.nonzero(depth == depth.max())[0]
            best = candidates[np.argmin(check_deg[candidates])]
            var_nbrs[v].append(int(best))
            check_nbrs[best].append(v)
            check_deg[best] += 1

    rows, cols = [], []
    for c in range(m):
        for v in check_nbrs[c]:
            rows.append(c)
            cols.append(v)
    data = np.ones(len(rows), dtype=np.uint8)
    return sp.coo_matrix((data, (rows, cols)), shape=(m, n)).tocsr()


_REGULAR_DEGREES = {0.5: (3, 6), 0.75: (3, 12)}


@lru_cache(maxsize=8)
def _cached_regular(n: int, var_degree: int, check_degree: int) -> LdpcCode:
    return _build_code(peg_parity_matrix(n, var_degree, check_degree))


def make_regular_code(block_length: int, rate: float) -> LdpcCode:
    """Built-in regular code at rate 1/2 or 3/4."""
    if rate not in _REGULAR_DEGREES:
        raise ValueError(f"built-in codes exist for rates {sorted(_REGULAR_DEGREES)}, got {rate}")
    dv, dc = _REGULAR_DEGREES[rate]
    return _cached_regular(block_length, dv, dc)


def ldpc_encode(bits: np.ndarray, code: LdpcCode) -> np.ndarray:
    """Systematic encoding; the output satisfies every parity check."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size != code.message_length:
        raise ValueError(f"expected {code.message_length} message bits, got {bits.size}")
    word = np.zeros(code.block_length, dtype=np.uint8)
    word[code.info_positions] = bits
    word[code.parity_positions] = (code.encoder_matrix @ bits) % 2
    return word


def _syndrome_ok(code: LdpcCode, hard: np.ndarray) -> bool:
    return not np.any((code.parity @ hard.astype(np.uint8)) % 2)


def ldpc_decode_spa(channel_llrs: np.ndarray, code: LdpcCode, max_iterations: int = 50):
    """Sum-product decoding with early exit once all checks pass.

    Returns (hard bits, posterior LLRs, converged).  Convergence
    additionally requires every posterior to carry a sign: an all-zero
    input is symmetric and decides nothing, so it reports failure.
    Positive LLR means bit 0.
    """
    llrs = np.clip(np.asarray(channel_llrs, dtype=float).ravel(), -LLR_CLIP, LLR_CLIP)
    if llrs.size != code.block_length:
        raise ValueError(f"expected {code.block_length} LLRs, got {llrs.size}")
    vidx, mask = code._check_vars, code._check_mask
    check_msgs = np.zeros(vidx.shape)
    posterior = llrs.copy()
    converged = False

    for _ in range(max_iterations):
        var_msgs = posterior[vidx] - check_msgs
        t = np.tanh(0.5 * np.clip(var_msgs, -LLR_CLIP, LLR_CLIP))
        t[~mask] = 1.0  # padding is neutral in the check product
        prefix = np.cumprod(np.concatenate([np.ones((t.shape[0], 1)), t[:, :-1]], axis=1), axis=1)
        suffix = np.cumprod(
            np.concatenate([np.ones((t.shape[0], 1)), t[:, :0:-1]], axis=1), axis=1
        )[:, ::-1]
        excl = np.clip(prefix * suffix, -_TANH_LIMIT, _TANH_LIMIT)
        check_msgs = np.clip(2.0 * np.arctanh(excl), -LLR_CLIP, LLR_CLIP)
        check_msgs[~mask] = 0.0

        posterior = llrs.copy()
        np.add.at(posterior, vidx[mask], check_msgs[mask])
        hard = (posterior < 0).astype(np.uint8)
        if _syndrome_ok(code, hard) and not np.any(posterior == 0.0):
            converged = True
            break

    hard = (posterior < 0).astype(np.uint8)
    return hard, posterior, converged


def to_alist(code_or_parity) -> str:
    """Serialise a parity matrix in the standard alist text format."""
    parity = code_or_parity.parity if isinstance(code_or_parity, LdpcCode) else code_or_parity
    parity = sp.csr_matrix(parity)
    m, n = parity.shape
    cols = parity.tocsc()
    col_deg = np.diff(cols.indptr)
    row_deg = np.diff(parity.indptr)
    lines = [f"{n} {m}", f"{col_deg.max()} {row_deg.max()}"]
    lines.append(" ".join(str(d) for d in col_deg))
    lines.append(" ".join(str(d) for d in row_deg))
    for j in range(n):
        entries = cols.indices[cols.indptr[j] : cols.indptr[j + 1]] + 1
        lines.append(" ".join(str(e) for e in sorted(entries)))
    for i in range(m):
        entries = parity.indices[parity.indptr[i] : parity.indptr[i + 1]] + 1
        lines.append(" ".join(str(e) for e in sorted(entries)))
    return "\n".join(lines) + "\n"


def from_alist(source) -> LdpcCode:
    """Load a parity matrix from alist text (a path or the text itself)."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
        if "\n" not in text:
            with open(text) as fh:
                text = fh.read()
    tokens = text.split()
    pos = 0

    def take(count):
        nonlocal pos
        vals = [int(t) for t in tokens[pos : pos + count]]
        pos += count
        return vals

    n, m = take(2)
    take(2)  # maximum degrees, implied by the lists
    col_deg = take(n)
    row_deg = take(m)
    rows, cols = [], []
    for j in range(n):
        for i in take(col_deg[j]):
            if i > 0:
                rows.append(i - 1)
                cols.append(j)
    for i in range(m):
        take(row_deg[i])  # redundant row lists; the column lists define H
    parity = sp.coo_matrix(
        (np.ones(len(rows), dtype=np.uint8), (rows, cols)), shape=(m, n)
    ).tocsr()
    parity.sum_duplicates()
    parity.data[:] = 1
    return _build_code(parity)
