"""One test per acceptance criterion; each records a PASS/FAIL line for the run summary."""

from __future__ import annotations

import contextlib
import io
import math
import time

import numpy as np
from scipy.stats import norm

from bodyct import dataset as ds
from bodyct import metrics as mt
from bodyct import volprep as vp
from bodyct.cli import run_subcommand
from bodyct.corpus import parse_corpus
from bodyct.labeltable import LabelRow, read_csv
from bodyct.rba.engine import label_sentences
from bodyct.systems import DISEASES, SYSTEMS
from conftest import pipeline_steps, record_criterion
from test_dataset import brute_force_cooccurrence

SEED = 20241016  # fixed once for the whole suite


def quiet(argv) -> int:
    with contextlib.redirect_stdout(io.StringIO()):
        return run_subcommand(argv)


# -- 1 ---------------------------------------------------------------------------

def test_gold_corpus_exactness(tmp_path, fixtures_dir):
    n_reports = len(parse_corpus(fixtures_dir / "synthetic_reports.jsonl").reports)
    t0 = time.perf_counter()
    code = quiet(["label", "--corpus", "bundled:synthetic_reports.jsonl", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    got = read_csv(tmp_path / "labels.csv")
    gold = read_csv(fixtures_dir / "gold_labels.csv")
    mismatches = len(set(map(_key, got)) ^ set(map(_key, gold)))
    ok = code == 0 and n_reports >= 300 and mismatches == 0 and len(got) == len(gold) and elapsed < 5.0
    record_criterion("RBA gold-corpus exactness", ok,
                     f"{n_reports} reports, {len(gold)} rows, {mismatches} mismatches, {elapsed:.2f}s")
    assert ok


def _key(r: LabelRow):
    return (r.report_id, r.system, r.status, tuple(sorted(r.labels.items())), r.usable)


# -- 2 ---------------------------------------------------------------------------

FILLERS = ("the", "small", "left", "right", "mild", "there", "is", "a", "with", "and", "in", "seen",
           "again", "stable", "new", "of", "measuring", "3", "mm", "bilateral", "scattered")


def _random_sentence(rng, rules, system):
    s = rules.system(system)
    words = list(rng.choice(FILLERS, size=rng.integers(0, 6)))
    pool = [s.organ_keywords]
    for c in s.classes:
        pool.append(c.keywords)
    pool += [s.blocklist + s.blocklist_organ_specific, rules.uncertainty, rules.negation]
    for _ in range(rng.integers(1, 4)):
        group = pool[rng.integers(len(pool))]
        if group:
            words.insert(rng.integers(len(words) + 1), group[rng.integers(len(group))])
    if rng.random() < 0.8:
        words.insert(rng.integers(len(words) + 1), s.organ_keywords[rng.integers(len(s.organ_keywords))])
    text = " ".join(words)
    return text[:1].upper() + text[1:] + "."


def _positive_sentence(rng, rules, system):
    s = rules.system(system)
    c = s.classes[rng.integers(len(s.classes))]
    organ = s.organ_keywords[rng.integers(len(s.organ_keywords))]
    disease = c.keywords[rng.integers(len(c.keywords))]
    return f"{rng.choice(['Small', 'Mild', 'There is'])} {organ} {disease}."


def _insert_negation(rng, sentence, negation):
    words = sentence.rstrip(".").split(" ")
    words.insert(rng.integers(len(words) + 1), negation[rng.integers(len(negation))])
    return " ".join(words) + "."


def test_metamorphic_rba(rules):
    rng = np.random.default_rng(SEED)
    n_mut, violations = 0, []
    while n_mut < 12_000:
        system = SYSTEMS[rng.integers(len(SYSTEMS))]
        sents = [_random_sentence(rng, rules, system) for _ in range(rng.integers(1, 5))]
        before = label_sentences(sents, rules, system).decisions
        # negation monotonicity
        i = rng.integers(len(sents))
        negated = sents[:i] + [_insert_negation(rng, sents[i], rules.negation)] + sents[i + 1:]
        after = label_sentences(negated, rules, system).decisions
        n_mut += 1
        if any(after[c] and not before[c] for c in before):
            violations.append(("negation", sents, negated))
        # positive dominance
        extended = sents + [_positive_sentence(rng, rules, system)]
        after = label_sentences(extended, rules, system).decisions
        n_mut += 1
        if any(before[c] and not after[c] for c in before):
            violations.append(("dominance", sents, extended))
    ok = not violations
    record_criterion("RBA metamorphic suite", ok, f"{n_mut} mutations, {len(violations)} violations")
    assert ok, violations[:3]


# -- 3 ---------------------------------------------------------------------------

def _pairwise(pos, neg):
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return (gt + 0.5 * eq) / (len(pos) * len(neg))


def test_auc_oracle():
    rng = np.random.default_rng(SEED)
    worst, n_ties = 0.0, 0
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[rng.choice(n, 2, replace=False)] = [0, 1]
        levels = int(rng.integers(2, 40))
        s = rng.integers(0, levels, n) / levels if rng.random() < 0.7 else rng.random(n)
        n_ties += len(np.unique(s)) < n
        worst = max(worst, abs(mt.auc(s, y) - _pairwise(s[y == 1], s[y == 0])))
    ok = worst <= 1e-12 and n_ties > 0
    record_criterion("AUC oracle equivalence", ok, f"1000 instances ({n_ties} with ties), max diff {worst:.2e}")
    assert ok


# -- 4 ---------------------------------------------------------------------------

def test_delong_vs_bootstrap():
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    worst = 0.0
    settings = [(0.5, None), (1.0, None), (1.5, None), (1.0, 8)]
    for mu, levels in settings:
        pos, neg = rng.normal(mu, 1.0, 500), rng.normal(0.0, 1.0, 500)
        if levels:
            pos, neg = np.round(pos * levels) / levels, np.round(neg * levels) / levels
        s = np.concatenate([pos, neg])
        y = np.array([1] * 500 + [0] * 500)
        d = mt.delong_ci(s, y)
        b = mt.bootstrap_ci(s, y, 2000, seed=rng)
        worst = max(worst, abs(d.ci_low - b.ci_low), abs(d.ci_high - b.ci_high))
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.02 and elapsed < 30.0
    record_criterion("DeLong vs bootstrap", ok,
                     f"{len(settings)} distributions, max endpoint diff {worst:.4f}, {elapsed:.2f}s")
    assert ok


# -- 5 ---------------------------------------------------------------------------

def test_delong_coverage():
    # binormal: positives N(mu, 1), negatives N(0, 1); true AUC = Phi(mu / sqrt(2))
    rng = np.random.default_rng(SEED)
    mu = 1.0
    true_auc = float(norm.cdf(mu / math.sqrt(2.0)))
    y = np.array([1] * 100 + [0] * 100)
    hits = 0
    for _ in range(500):
        s = np.concatenate([rng.normal(mu, 1.0, 100), rng.normal(0.0, 1.0, 100)])
        r = mt.delong_ci(s, y)
        hits += r.ci_low <= true_auc <= r.ci_high
    cov = hits / 500
    ok = 0.93 <= cov <= 0.97
    record_criterion("DeLong coverage", ok, f"{hits}/500 = {cov:.1%} (true AUC {true_auc:.4f}, n=200)")
    assert ok


# -- 6 ---------------------------------------------------------------------------

def test_split_integrity(tmp_path):
    patients = [f"P{i:06d}" for i in range(10_000)]
    rows = [LabelRow(f"R{i}-{k}", p, "lungs_pleura", "no_apparent_disease",
                     {c: 0 for c in DISEASES["lungs_pleura"]} | {"no_apparent_disease": 1}, True)
            for i, p in enumerate(patients) for k in range(1 + i % 3)]
    a = ds.split_by_patient(rows, seed=SEED)
    b = ds.split_by_patient(list(reversed(rows)), seed=SEED)
    a.write(tmp_path / "a.csv")
    b.write(tmp_path / "b.csv")
    identical = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    spans = {}
    for r in rows:
        spans.setdefault(r.patient_id, set()).add(a[r.patient_id])
    leaks = sum(len(v) > 1 for v in spans.values())
    counts = ds.split_counts(a)
    dev = max(abs(counts[s] / 10_000 - t) for s, t in zip(ds.SUBSETS, ds.DEFAULT_RATIOS))
    ok = identical and leaks == 0 and len(a) == 10_000 and dev <= 0.015
    record_criterion("Split integrity", ok,
                     f"{dict(counts)}, max deviation {100 * dev:.2f} points, leaks {leaks}, identical {identical}")
    assert ok


# -- 7 ---------------------------------------------------------------------------

def _random_rows(rng, n_patients, n_rows, system):
    classes = DISEASES[system]
    rows = []
    for i in range(n_rows):
        pos = [c for c in classes if rng.random() < 0.25]
        labels = {c: int(c in pos) for c in classes} | {"no_apparent_disease": int(not pos)}
        status = "has_findings" if pos else "no_apparent_disease"
        rows.append(LabelRow(f"r{i}", f"p{rng.integers(n_patients)}", system, status, labels, rng.random() < 0.9))
    return rows


def test_cooccurrence_partition():
    rng = np.random.default_rng(SEED)
    brute_ok = sum_ok = True
    n_brute = n_big = 0
    for _ in range(200):
        system = SYSTEMS[rng.integers(len(SYSTEMS))]
        rows = _random_rows(rng, int(rng.integers(1, 51)), int(rng.integers(1, 120)), system)
        t = ds.cooccurrence(rows, system)
        n, expected = brute_force_cooccurrence(rows, system)
        brute_ok &= t.n_patients == n and t.counts == expected
        n_brute += 1
    for _ in range(20):
        system = SYSTEMS[rng.integers(len(SYSTEMS))]
        rows = _random_rows(rng, 3000, 8000, system)
        t = ds.cooccurrence(rows, system)
        total = sum(pct for *_, pct in t.cells())
        sum_ok &= abs(total - 100.0) <= 0.01 and sum(t.counts.values()) == t.n_patients
        n_big += 1
    ok = brute_ok and sum_ok
    record_criterion("Co-occurrence partition", ok,
                     f"{n_brute} small corpora vs brute force, {n_big} large corpora sum to 100% and N")
    assert ok


# -- 8 ---------------------------------------------------------------------------

def test_resampling_fidelity():
    rng = np.random.default_rng(SEED)
    shape, margin = (40, 36, 32), 6
    zz, yy, xx = np.meshgrid(*(np.arange(n, dtype=float) for n in shape), indexing="ij")
    coef = rng.normal(size=4)
    fields = {"constant": lambda z, y, x: np.full_like(z, 417.25),
              "linear": lambda z, y, x: coef[0] + coef[1] * z + coef[2] * y + coef[3] * x}
    worst = 0.0
    for f in fields.values():
        vol = vp.VolumeGrid(f(zz, yy, xx), (1.0, 1.0, 1.0))
        for order in (1, 2, 3):
            out = vp.resample(vol, spline_order=order)
            c = [out.origin[a] + np.arange(out.shape[a]) * out.spacing[a] for a in range(3)]
            expect = f(*np.meshgrid(*c, indexing="ij"))
            inner = tuple(slice(margin, n - margin) for n in out.shape)
            worst = max(worst, float(np.max(np.abs(out.voxels[inner] - expect[inner]))))
    at_target = vp.VolumeGrid(rng.normal(size=(20, 21, 22)), (2.0, 2.0, 2.0), (3.0, -1.0, 7.5))
    same = vp.resample(at_target, spline_order=1)
    bitwise = np.array_equal(same.voxels, at_target.voxels) and same.voxels.dtype == at_target.voxels.dtype
    ok = worst <= 1e-6 and bitwise
    record_criterion("Resampling fidelity", ok,
                     f"max interior error {worst:.2e} (orders 1-3, margin {margin} voxels), bitwise identity {bitwise}")
    assert ok


# -- 9 ---------------------------------------------------------------------------

EXPECTED_SIZE = {"lungs_pleura": (224, 160, 160), "liver_gallbladder": (96, 128, 128),
                 "kidneys_ureters": (96, 128, 128)}
EXPECTED_CLIP = {"lungs_pleura": (-1000.0, 800.0), "liver_gallbladder": (-200.0, 500.0),
                 "kidneys_ureters": (-200.0, 500.0)}


def _random_case(rng, system):
    size = EXPECTED_SIZE[system]
    shape = tuple(int(rng.integers(max(8, n // 2), int(n * 1.3))) for n in size)
    vol = rng.integers(-1500, 1500, shape).astype(np.float32)
    if rng.random() < 0.05:
        # saturated and larger than the patch: constant after clipping
        shape = tuple(n + 4 for n in size)
        vol = np.full(shape, 3000.0, dtype=np.float32)
    mask = np.zeros(shape, dtype=bool)
    for _ in range(rng.integers(1, 4)):
        c = [int(rng.integers(n)) for n in shape]
        r = [int(rng.integers(1, max(2, n // 6))) for n in shape]
        mask[tuple(slice(max(0, a - b), a + b) for a, b in zip(c, r))] = True
    return vp.VolumeGrid(vol, (2.0, 2.0, 2.0)), mask


def test_patch_geometry():
    rng = np.random.default_rng(SEED)
    bad, n_cases, n_degenerate, n_clamped = [], 0, 0, 0
    for system in SYSTEMS:
        lo, hi = EXPECTED_CLIP[system]
        if vp.DEFAULT_POLICY.range_for(system) != (lo, hi):
            bad.append(("policy", system))
        for i in range(100):
            vol, mask = _random_case(rng, system)
            spec = vp.place_patch(mask, system, vol)
            raw, _ = vp.extract_patch(vol, spec, normalize=False)
            clipped = vp.clip_patch(raw, system)
            patch, degenerate = vp.extract_patch(vol, spec)
            n_cases += 1
            n_degenerate += degenerate
            n_clamped += bool(np.any(raw < lo) or np.any(raw > hi))
            if patch.shape != EXPECTED_SIZE[system] or clipped.min() < lo or clipped.max() > hi:
                bad.append((system, i, "shape/clip"))
            if not degenerate:
                # the normalized patch is an affine image of the clamped one
                back = patch * clipped.std() + clipped.mean()
                if np.max(np.abs(back - clipped)) > 1e-6:
                    bad.append((system, i, "affine"))
            if not degenerate and (abs(patch.mean()) >= 1e-9 or abs(patch.std() - 1.0) >= 1e-9):
                bad.append((system, i, "moments"))
    ok = not bad
    record_criterion("Patch geometry", ok,
                     f"{n_cases} random masks, {n_clamped} needed clamping, {n_degenerate} flagged degenerate, "
                     f"{len(bad)} failures")
    assert ok, bad[:5]


# -- 10 --------------------------------------------------------------------------

def _snapshot(out):
    # config files record the output directory and thread count, which differ by design
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if not p.name.endswith(".config.yaml")}


def test_end_to_end_determinism(tmp_path):
    snaps = []
    for run, jobs in (("a", 1), ("b", 1), ("c", 4)):
        out = tmp_path / run
        for argv in pipeline_steps(out):
            assert quiet(["--jobs", str(jobs), *argv]) == 0, argv
        snaps.append(_snapshot(out))
    same_runs = snaps[0] == snaps[1]
    same_threads = snaps[0] == snaps[2]
    ok = same_runs and same_threads and len(snaps[0]) >= 10
    record_criterion("End-to-end determinism", ok,
                     f"{len(snaps[0])} files; repeat identical {same_runs}, jobs=1 vs jobs=4 identical {same_threads}")
    assert ok

