"""SDPA sparse format (``.dat-s``) export and import.

SDPA's primal is ``min c @ x  s.t.  sum_i F_i x_i - F_0 PSD``, which is the
moment problem with ``x = y`` (free moments) and ``F_0`` the negated
constant block. Diagonal blocks carry a negative size in the block
structure line. Only upper-triangle entries (``i <= j``) are written.
The constant objective offset, which SDPA cannot represent, goes in a
comment line.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .problem import SdpProblem


def _num(v: float) -> str:
    return repr(float(v))


def write_sdpa(prob: SdpProblem, dest=None, comment: str = "") -> str:
    out = io.StringIO()
    out.write(f'"{comment or "moment relaxation exported by perturbsos"}"\n')
    out.write(f"* objective offset {_num(prob.offset)}\n")
    out.write(f"{prob.nfree} = mDIM\n")
    bs = prob.block_struct
    out.write(f"{len(bs)} = nBLOCK\n")
    out.write(" ".join(str(b) for b in bs) + " = bLOCKsTRUCT\n")
    out.write("{" + ", ".join(_num(v) for v in prob.c) + "}\n")
    s = prob.block_size
    iu, ju = np.triu_indices(s)
    ks = prob.entry_index[iu, ju]
    order = np.lexsort((ju, iu, ks))
    for k in range(prob.nfree + 1):
        sign = -1.0 if k == 0 else 1.0
        # moment block: each upper-triangle entry of F_k is 1 where index == k
        for t in order[np.searchsorted(ks[order], k, "left"):np.searchsorted(ks[order], k, "right")]:
            out.write(f"{k} 1 {iu[t] + 1} {ju[t] + 1} {_num(sign * 1.0)}\n")
        for j in range(prob.m):
            v = prob.G[j, k]
            if v != 0.0:
                # diagonal block of Z holds -G y, so F_k = -G[:, k] and SDPA's F_0 = +G[:, 0]
                out.write(f"{k} 2 {j + 1} {j + 1} {_num(v if k == 0 else -v)}\n")
    text = out.getvalue()
    if dest is not None:
        Path(dest).write_text(text, encoding="utf-8")
    return text


@dataclass
class SdpaData:
    nfree: int
    block_struct: tuple[int, ...]
    c: np.ndarray
    blocks: list[list[np.ndarray]]    # blocks[k][b], dense symmetric (k = 0..nfree)
    offset: float = 0.0


def read_sdpa(source) -> SdpaData:
    text = Path(source).read_text(encoding="utf-8") if isinstance(source, (str, Path)) and \
        Path(str(source)).exists() else str(source)
    offset = 0.0
    lines = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("*"):
            if line.startswith("* objective offset"):
                offset = float(line.split()[-1])
            continue
        if line.startswith('"'):
            continue
        lines.append(line.split("=")[0] if "=" in line else line)
    clean = lambda s: s.replace("{", " ").replace("}", " ").replace(",", " ").split()
    nfree = int(clean(lines[0])[0])
    nblock = int(clean(lines[1])[0])
    bs = tuple(int(v) for v in clean(lines[2])[:nblock])
    c = np.array([float(v) for v in clean(lines[3])[:nfree]])
    blocks = [[np.zeros((abs(b), abs(b))) for b in bs] for _ in range(nfree + 1)]
    for line in lines[4:]:
        k, b, i, j, v = clean(line)
        k, b, i, j = int(k), int(b) - 1, int(i) - 1, int(j) - 1
        blocks[k][b][i, j] = float(v)
        blocks[k][b][j, i] = float(v)
    return SdpaData(nfree, bs, c, blocks, offset)
