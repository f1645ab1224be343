"""NumPy implementations of the match kernels (fallback for ``_kernels``).

Layout shared with the compiled module:

* a *slot* is one (rule, domain) pair; slots are sorted by rule so rule ``r``
  owns ``rule_ptr[r]:rule_ptr[r + 1]``;
* endpoints are CSR-encoded: endpoint ``e`` hits slots
  ``ep_slot[ep_ptr[e]:ep_ptr[e + 1]]``;
* a *group* is one (subscriber, bin) accumulation cell.
"""

from __future__ import annotations

import numpy as np

NO_MATCH = np.iinfo(np.int64).max


def accumulate_matches(group, ep, packets, offsets, ep_ptr, ep_slot, slot_rule, first, pkt) -> None:
    """Fold flows into ``first`` (earliest offset per group x slot) and
    ``pkt`` (packets per group x rule, counted once per flow and rule).

    Flows with ``ep < 0`` are skipped. Arrays are updated in place.
    """
    keep = ep >= 0
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return
    e = ep[idx]
    counts = ep_ptr[e + 1] - ep_ptr[e]
    flow_rep = np.repeat(idx, counts)
    starts = np.repeat(ep_ptr[e], counts)
    within = np.arange(flow_rep.size) - np.repeat(np.cumsum(counts) - counts, counts)
    slots = ep_slot[starts + within]
    g = group[flow_rep]
    np.minimum.at(first, (g, slots), offsets[flow_rep])
    n_rule = pkt.shape[1]
    pairs = np.unique(flow_rep * n_rule + slot_rule[slots])
    f, r = np.divmod(pairs, n_rule)
    np.add.at(pkt, (group[f], r), packets[f])


def satisfaction_offsets(first, rule_ptr, slot_primary, required):
    """Per group x rule: matched domain count, primary-seen flag, and the
    earliest offset at which ``required`` domains incl. a Primary are in (-1 if never)."""
    n_group = first.shape[0]
    n_rule = rule_ptr.shape[0] - 1
    slot_rule = np.repeat(np.arange(n_rule), np.diff(rule_ptr))
    matched = np.zeros((n_group, n_rule), dtype=np.int64)
    primary = np.zeros((n_group, n_rule), dtype=np.uint8)
    sat = np.full((n_group, n_rule), -1, dtype=np.int64)
    gs, ss = np.nonzero(first != NO_MATCH)
    if gs.size == 0:
        return matched, primary, sat
    rs = slot_rule[ss]
    off = first[gs, ss]
    prim = slot_primary[ss].astype(np.int64)
    np.add.at(matched, (gs, rs), 1)
    np.maximum.at(primary, (gs, rs), slot_primary[ss])
    cell = gs * n_rule + rs
    order = np.lexsort((off, cell))
    cell, off, prim, rs = cell[order], off[order], prim[order], rs[order]
    first_pos = np.flatnonzero(np.r_[True, cell[1:] != cell[:-1]])
    run = np.diff(np.r_[first_pos, cell.size])
    rank = np.arange(cell.size) - np.repeat(first_pos, run)
    csum = np.cumsum(prim)
    before = np.repeat(csum[first_pos] - prim[first_pos], run)
    ok = (rank + 1 >= required[rs]) & (csum - before > 0)
    hit_cells, pos = np.unique(cell[ok], return_index=True)
    sat.reshape(-1)[hit_cells] = off[ok][pos]
    return matched, primary, sat
