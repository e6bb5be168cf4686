"""APE evaluation: TER, BLEU, the seven-way outcome taxonomy, F1 and significance.

All functions take token lists (or whitespace-tokenized strings) and are
case-sensitive. TER and BLEU are returned as percentages.
"""

from __future__ import annotations

import collections
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .data import AlignmentError, check_aligned, read_lines

CATEGORIES = ("RUIN", "DEGR", "EVEN", "IMPR", "PERF", "ACCE", "NEGL")
MAX_SHIFT_SIZE = 10
MAX_SHIFT_DIST = 50
NGRAM_ORDER = 4


def _tokens(x):
    return x.split() if isinstance(x, str) else list(x)


def _to_ids(hyp, ref):
    table = {}
    h = np.array([table.setdefault(t, len(table)) for t in hyp], dtype=np.int64)
    r = np.array([table.setdefault(t, len(table)) for t in ref], dtype=np.int64)
    return h, r


# ---------------------------------------------------------------------------
# TER
# ---------------------------------------------------------------------------


@njit(cache=True)
def _levenshtein(h, r):
    m = r.shape[0]
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, h.shape[0] + 1):
        cur[0] = i
        hi = h[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1] + (0 if hi == r[j - 1] else 1)
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


@njit(cache=True)
def _shifted(h, start, length, dest):
    """Move h[start:start+length] so it begins at ``dest`` of the remainder."""
    n = h.shape[0]
    out = np.empty(n, dtype=np.int64)
    rest = np.empty(n - length, dtype=np.int64)
    k = 0
    for i in range(n):
        if i < start or i >= start + length:
            rest[k] = h[i]
            k += 1
    k = 0
    for i in range(dest):
        out[k] = rest[i]
        k += 1
    for i in range(length):
        out[k] = h[start + i]
        k += 1
    for i in range(dest, n - length):
        out[k] = rest[i]
        k += 1
    return out


@njit(cache=True)
def _ter_edits(h, r, max_shift_size, max_shift_dist):
    """Greedy best-improving block shifts, then Levenshtein; returns (shifts, edits).

    Each round applies the single block move (any block of up to
    ``max_shift_size`` words, any destination within ``max_shift_dist``) that
    lowers the edit distance the most; rounds stop when no move helps.
    """
    cur = h.copy()
    dist = _levenshtein(cur, r)
    shifts = 0
    n = cur.shape[0]
    while dist > 0:
        best_dist = dist
        best_start = -1
        best_len = 0
        best_dest = 0
        for start in range(n):
            for length in range(1, min(max_shift_size, n - start) + 1):
                for dest in range(n - length + 1):
                    if dest == start or abs(dest - start) > max_shift_dist:
                        continue
                    d = _levenshtein(_shifted(cur, start, length, dest), r)
                    # on equal gain prefer the longer block
                    if d < best_dist or (d == best_dist and best_start >= 0 and length > best_len):
                        best_dist = d
                        best_start = start
                        best_len = length
                        best_dest = dest
        if best_start < 0:
            break
        cur = _shifted(cur, best_start, best_len, best_dest)
        dist = best_dist
        shifts += 1
    return shifts, shifts + dist


def ter_edits(hypothesis, reference):
    """Number of TER edits (shifts + insertions + deletions + substitutions)."""
    hyp, ref = _tokens(hypothesis), _tokens(reference)
    if not ref:
        raise ValueError("TER needs a non-empty reference")
    h, r = _to_ids(hyp, ref)
    return int(_ter_edits(h, r, MAX_SHIFT_SIZE, MAX_SHIFT_DIST)[1])


def levenshtein(hypothesis, reference):
    h, r = _to_ids(_tokens(hypothesis), _tokens(reference))
    return int(_levenshtein(h, r))


def ter(hypothesis, reference):
    """Translation edit rate in percent: edits / reference length * 100."""
    ref = _tokens(reference)
    return 100.0 * ter_edits(hypothesis, ref) / len(ref)


def corpus_ter(hypotheses, references):
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    edits = sum(ter_edits(h, r) for h, r in zip(hypotheses, references))
    return 100.0 * edits / sum(len(_tokens(r)) for r in references)


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def _ngrams(tokens, n):
    return collections.Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypothesis, reference, order=NGRAM_ORDER):
    """[matches_1..n, totals_1..n, hyp_len, ref_len] as an int array."""
    hyp, ref = _tokens(hypothesis), _tokens(reference)
    stats = np.zeros(2 * order + 2, dtype=np.int64)
    for n in range(1, order + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        stats[n - 1] = sum(min(c, r[g]) for g, c in h.items())
        stats[order + n - 1] = max(len(hyp) - n + 1, 0)
    stats[-2], stats[-1] = len(hyp), len(ref)
    return stats


def bleu_from_stats(stats, order=NGRAM_ORDER):
    """Unsmoothed BLEU (percent) from summed sufficient statistics.

    Orders for which the hypothesis has no n-grams at all are left out of the
    geometric mean; any order with zero matches gives 0.
    """
    stats = np.asarray(stats)
    matches, totals = stats[:order], stats[order:2 * order]
    hyp_len, ref_len = stats[-2], stats[-1]
    if hyp_len == 0:
        return 0.0
    used = totals > 0
    if (matches[used] == 0).any():
        return 0.0
    log_p = np.log(matches[used] / totals[used]).mean()
    bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    return 100.0 * bp * math.exp(log_p)


def _bleu_from_stats_batch(stats, order=NGRAM_ORDER):
    """Vectorized :func:`bleu_from_stats` over rows of ``stats``."""
    matches = stats[:, :order].astype(np.float64)
    totals = stats[:, order:2 * order].astype(np.float64)
    hyp_len = stats[:, -2].astype(np.float64)
    ref_len = stats[:, -1].astype(np.float64)
    used = totals > 0
    zero = ((matches == 0) & used).any(axis=1) | (hyp_len == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(used, np.log(np.where(used & (matches > 0), matches / totals, 1.0)), 0.0)
        mean_logp = logp.sum(axis=1) / np.maximum(used.sum(axis=1), 1)
        bp = np.minimum(1.0, np.exp(1.0 - ref_len / np.maximum(hyp_len, 1)))
    return np.where(zero, 0.0, 100.0 * bp * np.exp(mean_logp))


def bleu_sentence(hypothesis, reference):
    return bleu_from_stats(bleu_stats(hypothesis, reference))


def bleu_corpus(hypotheses, references):
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not references:
        raise ValueError("empty corpus")
    total = sum(bleu_stats(h, r) for h, r in zip(hypotheses, references))
    return bleu_from_stats(total)


# ---------------------------------------------------------------------------
# outcome taxonomy
# ---------------------------------------------------------------------------


def _category(mt_edits, ape_edits, unchanged):
    if mt_edits == 0:
        return "ACCE" if unchanged else "RUIN"
    if unchanged:
        return "NEGL"
    if ape_edits == 0:
        return "PERF"
    if ape_edits > mt_edits:
        return "DEGR"
    if ape_edits == mt_edits:
        return "EVEN"
    return "IMPR"


def categorize(mt, ape, reference):
    """Outcome category of one APE output against its MT and reference.

    TERs are compared through integer edit counts over the shared reference
    length, so near-ties are never decided by rounding.
    """
    mt, ape, ref = _tokens(mt), _tokens(ape), _tokens(reference)
    return _category(ter_edits(mt, ref), ter_edits(ape, ref), mt == ape)


def editing_scores(cases):
    """(precision, recall, F1) with "MT imperfect" as the positive class.

    ``cases`` holds ``(mt_perfect, edited)`` pairs. Undefined ratios count as 0.
    """
    cases = list(cases)
    if not cases:
        raise ValueError("no cases to score")
    tp = sum(1 for perfect, edited in cases if not perfect and edited)
    fp = sum(1 for perfect, edited in cases if perfect and edited)
    fn = sum(1 for perfect, edited in cases if not perfect and not edited)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def f1_editing(cases):
    return editing_scores(cases)[2]


@dataclass
class SentenceEval:
    ter_mt: float
    ter_ape: float
    bleu_mt: float
    bleu_ape: float
    delta_ter: float
    delta_bleu: float
    category: str
    mt_edits: int
    ape_edits: int
    ref_len: int


def evaluate_sentence(mt, ape, reference):
    mt, ape, ref = _tokens(mt), _tokens(ape), _tokens(reference)
    if not ref:
        raise ValueError("empty reference")
    e_mt, e_ape = ter_edits(mt, ref), ter_edits(ape, ref)
    t_mt, t_ape = 100.0 * e_mt / len(ref), 100.0 * e_ape / len(ref)
    b_mt, b_ape = bleu_sentence(mt, ref), bleu_sentence(ape, ref)
    if mt == ape:
        # identical outputs score identically; keep the deltas exactly zero
        t_ape, b_ape = t_mt, b_mt
    return SentenceEval(t_mt, t_ape, b_mt, b_ape, t_ape - t_mt, b_ape - b_mt,
                        _category(e_mt, e_ape, mt == ape), e_mt, e_ape, len(ref))


# ---------------------------------------------------------------------------
# significance
# ---------------------------------------------------------------------------


def _sentence_stats(metric, hyps, refs):
    if metric == "bleu":
        return np.array([bleu_stats(h, r) for h, r in zip(hyps, refs)])
    if metric == "ter":
        return np.array([[ter_edits(h, r), len(_tokens(r))] for h, r in zip(hyps, refs)])
    raise ValueError(f"unknown metric {metric!r}; use 'bleu' or 'ter'")


def _corpus_scores(metric, stats):
    if metric == "bleu":
        return _bleu_from_stats_batch(stats)
    return 100.0 * stats[:, 0] / stats[:, 1]


def paired_bootstrap(metric, system_a, system_b, references, resamples=1000, seed=1128):
    """p-value that ``system_b`` is not better than ``system_a``.

    Resamples sentences with replacement and counts the share of resamples
    in which B fails to beat A (ties count one half). Lower TER and higher
    BLEU are better.
    """
    if not len(system_a) == len(system_b) == len(references):
        raise ValueError("systems and references must be aligned")
    if not references:
        raise ValueError("empty test set")
    if resamples < 1000:
        raise ValueError("use at least 1000 resamples")
    sa = _sentence_stats(metric, system_a, references)
    sb = _sentence_stats(metric, system_b, references)
    rng = np.random.default_rng(seed)
    n = len(references)
    fails = 0.0
    chunk = 500
    for lo in range(0, resamples, chunk):
        k = min(chunk, resamples - lo)
        idx = rng.integers(0, n, size=(k, n))
        score_a = _corpus_scores(metric, sa[idx].sum(axis=1))
        score_b = _corpus_scores(metric, sb[idx].sum(axis=1))
        if metric == "ter":
            score_a, score_b = -score_a, -score_b
        fails += np.sum(score_b < score_a) + 0.5 * np.sum(score_b == score_a)
    return float(fails / resamples)


# ---------------------------------------------------------------------------
# corpus report
# ---------------------------------------------------------------------------


@dataclass
class CategoryStats:
    count: int
    percent: float
    mean_delta_bleu: float | None
    sd_delta_bleu: float | None


@dataclass
class CorpusReport:
    sentences: int
    ter_mt: float
    ter_ape: float
    bleu_mt: float
    bleu_ape: float
    ter_mt_sd: float
    ter_ape_sd: float
    bleu_mt_sd: float
    bleu_ape_sd: float
    categories: dict
    precision: float
    recall: float
    f1: float
    p_values: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render(self):
        """Plain-text tables: corpus scores first, then the outcome distribution."""
        lines = [
            f"{'':<10}{'TER':>8} {'(sd)':>8}   {'BLEU':>8} {'(sd)':>8}",
            f"{'Given MT':<10}{self.ter_mt:8.2f} ({self.ter_mt_sd:6.2f})   "
            f"{self.bleu_mt:8.2f} ({self.bleu_mt_sd:6.2f})",
            f"{'APE':<10}{self.ter_ape:8.2f} ({self.ter_ape_sd:6.2f})   "
            f"{self.bleu_ape:8.2f} ({self.bleu_ape_sd:6.2f})",
        ]
        for key, p in sorted(self.p_values.items()):
            lines.append(f"p[{key}] = {p:.4f}")
        lines.append("")

        def cell(x):
            return f"{x:8.2f}" if x is not None else f"{'-':>8}"

        lines.append(f"{'':<10}" + "".join(f"{c:>8}" for c in CATEGORIES) + f"{'F1':>8}")
        cats = [self.categories[c] for c in CATEGORIES]
        lines.append(f"{'%':<10}" + "".join(cell(c.percent) for c in cats) + f"{100 * self.f1:8.1f}")
        lines.append(f"{'mu dBLEU':<10}" + "".join(cell(c.mean_delta_bleu) for c in cats))
        lines.append(f"{'sd dBLEU':<10}" + "".join(cell(c.sd_delta_bleu) for c in cats))
        lines.append(f"{'n':<10}" + "".join(f"{c.count:8d}" for c in cats))
        return "\n".join(lines) + "\n"


def report(mt, ape, references, baseline=None, resamples=0, seed=1128):
    """Corpus report for one APE system; ``resamples`` > 0 adds bootstrap p-values.

    With ``baseline`` (another APE system's output) the p-values also cover
    the APE system against that baseline.
    """
    mt = [_tokens(s) for s in mt]
    ape = [_tokens(s) for s in ape]
    refs = [_tokens(s) for s in references]
    if not len(mt) == len(ape) == len(refs):
        raise ValueError(f"unaligned inputs: {len(mt)} MT, {len(ape)} APE, {len(refs)} references")
    if not refs:
        raise ValueError("empty test set")
    evals = [evaluate_sentence(m, a, r) for m, a, r in zip(mt, ape, refs)]
    n = len(evals)
    ref_total = sum(e.ref_len for e in evals)

    categories = {}
    for c in CATEGORIES:
        deltas = np.array([e.delta_bleu for e in evals if e.category == c])
        categories[c] = CategoryStats(
            count=int(deltas.size),
            percent=100.0 * deltas.size / n,
            mean_delta_bleu=float(deltas.mean()) if deltas.size else None,
            sd_delta_bleu=float(deltas.std()) if deltas.size else None,
        )
    precision, recall, f1 = editing_scores((e.mt_edits == 0, m != a) for e, m, a in zip(evals, mt, ape))

    p_values = {}
    if resamples:
        for metric in ("ter", "bleu"):
            p_values[f"{metric} ape>mt"] = paired_bootstrap(metric, mt, ape, refs, resamples, seed)
            if baseline is not None:
                base = [_tokens(s) for s in baseline]
                p_values[f"{metric} ape>baseline"] = paired_bootstrap(
                    metric, base, ape, refs, resamples, seed)

    sent = {k: np.array([getattr(e, k) for e in evals]) for k in ("ter_mt", "ter_ape", "bleu_mt", "bleu_ape")}
    return CorpusReport(
        sentences=n,
        ter_mt=100.0 * sum(e.mt_edits for e in evals) / ref_total,
        ter_ape=100.0 * sum(e.ape_edits for e in evals) / ref_total,
        bleu_mt=bleu_corpus(mt, refs),
        bleu_ape=bleu_corpus(ape, refs),
        ter_mt_sd=float(sent["ter_mt"].std()),
        ter_ape_sd=float(sent["ter_ape"].std()),
        bleu_mt_sd=float(sent["bleu_mt"].std()),
        bleu_ape_sd=float(sent["bleu_ape"].std()),
        categories=categories,
        precision=precision,
        recall=recall,
        f1=f1,
        p_values=p_values,
    )


def report_files(mt_path, ape_path, ref_path, baseline_path=None, resamples=0, seed=1128):
    """Read aligned token files and build a :class:`CorpusReport`."""
    paths = [mt_path, ape_path, ref_path] + ([baseline_path] if baseline_path else [])
    cols = [read_lines(p) for p in paths]
    check_aligned(cols, [str(p) for p in paths], allow_empty=True)
    for lineno, r in enumerate(cols[2], start=1):
        if not r.strip():
            raise AlignmentError(f"{ref_path} has an empty reference", lineno)
    return report(cols[0], cols[1], cols[2], cols[3] if baseline_path else None, resamples, seed)
