"""Shared builders and independent oracles for the test-suite."""

import functools
import math

import numpy as np

from svalign.vecalign import DocVectors


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def doc_vectors(vectors, max_count=1):
    """Count-1 rows are ``vectors``; longer overlaps use the normalized mean."""
    v = np.asarray(vectors, dtype=np.float64)
    n = len(v)
    rows = {1: v}
    for c in range(2, max_count + 1):
        if n - c + 1 < 1:
            break
        rows[c] = unit(np.array([v[a:a + c].mean(axis=0) for a in range(n - c + 1)]))
    return DocVectors(n, rows)


def cos(x, y):
    nx, ny = math.sqrt(float(np.dot(x, x))), math.sqrt(float(np.dot(y, y)))
    if nx == 0 or ny == 0:
        return 0.0
    return max(-1.0, min(1.0, float(np.dot(x, y)) / (nx * ny)))


def cost_oracle(x, y, i, j, xs, ys):
    den = sum(1 - cos(x, t) for t in ys) / (2 * len(ys)) + sum(1 - cos(s, y) for s in xs) / (2 * len(xs))
    if den == 0:
        return math.inf
    return (1 - cos(x, y)) * i * j / den


def dp_oracle(X: DocVectors, Y: DocVectors, max_block, del_cost):
    """Minimum total cost by memoized recursion, every sample used as normalizer."""
    xs = [r for r in X.raw[1] if np.any(r)]
    ys = [r for r in Y.raw[1] if np.any(r)]

    @functools.lru_cache(maxsize=None)
    def best(a, b):
        if a == 0 and b == 0:
            return 0.0
        out = math.inf
        if a > 0:
            out = min(out, best(a - 1, b) + del_cost)
        if b > 0:
            out = min(out, best(a, b - 1) + del_cost)
        for i in range(1, max_block + 1):
            for j in range(1, max_block + 1):
                if i > a or j > b or i not in X.raw or j not in Y.raw:
                    continue
                x, y = X.raw[i][a - i], Y.raw[j][b - j]
                if not np.any(x) or not np.any(y):
                    continue
                out = min(out, best(a - i, b - j) + cost_oracle(x, y, i, j, xs, ys))
        return out

    return best(X.n, Y.n)


def path_cost(entries, X, Y, del_cost):
    """Cost of an arbitrary feasible path under the oracle cost."""
    xs = [r for r in X.raw[1] if np.any(r)]
    ys = [r for r in Y.raw[1] if np.any(r)]
    total = 0.0
    for src, tgt in entries:
        if src is None or tgt is None:
            total += del_cost
        else:
            total += cost_oracle(X.raw[src[1]][src[0]], Y.raw[tgt[1]][tgt[0]], src[1], tgt[1], xs, ys)
    return total


def random_path(n, m, max_block, rng):
    a = b = 0
    out = []
    while a < n or b < m:
        moves = [(1, 0), (0, 1)] + [(i, j) for i in range(1, max_block + 1) for j in range(1, max_block + 1)]
        moves = [(i, j) for i, j in moves if a + i <= n and b + j <= m]
        i, j = moves[rng.integers(len(moves))]
        out.append(((a, i) if i else None, (b, j) if j else None))
        a, b = a + i, b + j
    return out


GOLDEN_SYNTH = ["--n-pairs", "4", "--segs-per-doc", "20,30", "--identical-rate", "0.1",
                "--with-audio", "--seed", "7", "--target-cosine", "0.9"]


def run_golden_pipeline(workdir, threads=None):
    """synth -> detect-identical -> overlaps -> align -> postprocess -> score/stats through the CLI.

    Returns the report text and every output file's bytes keyed by relative path.
    """
    from pathlib import Path

    from svalign.cli import run

    w = Path(workdir)
    th = [] if threads is None else ["--threads", str(threads)]
    quiet = ["--log-level", "WARNING"]

    def call(*argv):
        code = run([*argv, *th, *quiet])
        if code != 0:
            raise AssertionError(f"svalign {argv[0]} exited {code}")

    c = w / "corpus"
    call("synth", "--out", str(c), *GOLDEN_SYNTH)
    segs = ["--src-segments", str(c / "src.segments.tsv"), "--tgt-segments", str(c / "tgt.segments.tsv")]
    emb = ["--src-emb", str(c / "src.emb"), "--tgt-emb", str(c / "tgt.emb")]
    call("detect-identical", "--pairs", str(c / "pairs.tsv"), *segs, "--audio-dir", str(c / "audio"),
         "--out", str(w / "identical.tsv"))
    call("overlaps", "--segments", str(c / "src.segments.tsv"), "--out", str(w / "src.overlaps.tsv"))
    call("overlaps", "--segments", str(c / "tgt.segments.tsv"), "--out", str(w / "tgt.overlaps.tsv"))
    call("align", "--pairs", str(c / "pairs.tsv"), *emb, "--src-sidecar", str(w / "src.overlaps.tsv"),
         "--tgt-sidecar", str(w / "tgt.overlaps.tsv"), "--blacklist", str(w / "identical.tsv"),
         "--out", str(w / "raw.tsv"))
    call("postprocess", "--alignments", str(w / "raw.tsv"), *segs, *emb, "--audio-dir", str(c / "audio"),
         "--out", str(w / "final.tsv"))
    call("score", "--reference", str(c / "gold.tsv"), "--system", str(w / "raw.tsv"), "--out", str(w / "score.tsv"))
    call("stats", "--alignments", str(w / "raw.tsv"), "--pairs", str(c / "pairs.tsv"),
         "--src-segments", str(c / "src.segments.tsv"), "--out", str(w / "raw.stats.tsv"))
    call("stats", "--alignments", str(w / "final.tsv"), "--pairs", str(c / "pairs.tsv"),
         "--src-segments", str(c / "src.segments.tsv"), "--out", str(w / "final.stats.tsv"))
    report = "".join(f"# {name}\n" + (w / name).read_text()
                     for name in ("score.tsv", "raw.stats.tsv", "final.stats.tsv", "final.tsv.stages.tsv"))
    files = {str(p.relative_to(w)): p.read_bytes() for p in sorted(w.rglob("*")) if p.is_file()}
    return report, files


GOLDEN_REPORT = "golden_report.txt"

if __name__ == "__main__":
    # regenerate the committed golden report: python3 tests/helpers.py
    import sys
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as tmp:
        text, _ = run_golden_pipeline(tmp)
    out = Path(__file__).parent / "data" / GOLDEN_REPORT
    out.write_text(text)
    sys.stdout.write(f"wrote {out}\n")
