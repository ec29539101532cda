#!/usr/bin/env python3
"""Regenerate the bundled synthetic fixtures.

Every findings sentence below is hand-labeled with its effect on each organ
system. Gold labels are aggregated from those declarations alone; the labeler
is never consulted, so the gold table is an independent oracle.

Effect codes per system (L = lungs/pleura, H = liver/gallbladder, K = kidneys/ureters):
  <class>  un-negated, localized mention of that disease class (positive)
  "m"      organ mentioned, nothing abnormal
  "n"      organ mentioned, every abnormal term negated
  "v"      un-negated blocklist term or uncertain disease mention (vetoes normal)

Usage: python3 scripts/make_synthetic_corpus.py [--out DIR]
"""

from __future__ import annotations

import argparse
import csv
import json
import random
from pathlib import Path

import numpy as np

SYS = {"L": "lungs_pleura", "H": "liver_gallbladder", "K": "kidneys_ureters"}
CLASSES = {
    "lungs_pleura": ("atelectasis", "nodule", "emphysema", "effusion"),
    "liver_gallbladder": ("hepatobiliary_calcification", "lesion", "dilation", "fatty"),
    "kidneys_ureters": ("stone", "lesion", "atrophy", "cyst"),
}
NORMAL = "no_apparent_disease"
LABEL_COLUMNS = tuple(dict.fromkeys([c for s in CLASSES.values() for c in s] + [NORMAL]))
HEADER = ("report_id", "patient_id", "system", "status", "usable") + LABEL_COLUMNS + ("evidence",)

SEED = 1729

# (sentence, {system_code: effect or tuple of effects})
SNIPPETS = [
    # lungs / pleura: positives
    ("Subsegmental atelectasis in the left lower lobe.", {"L": "atelectasis"}),
    ("Bibasilar dependent atelectasis.", {"L": "atelectasis"}),
    ("Mild atelectasis.", {"L": "atelectasis"}),
    ("Partial collapse of the right middle lobe.", {"L": "atelectasis"}),
    ("A 6 mm nodule in the right upper lobe.", {"L": "nodule"}),
    ("Nodule measuring 1.2 cm in the right lung.", {"L": "nodule"}),
    ("Scattered pulmonary nodules measuring up to 4 mm.", {"L": "nodule"}),
    ("Spiculated mass in the left upper lobe measuring 3.1 cm.", {"L": ("nodule", "v")}),
    ("Multiple pulmonary metastases.", {"L": "nodule"}),
    ("Calcified granuloma in the right upper lobe.", {"L": ("nodule", "v")}),
    ("No interval change in the 4 mm nodule in the right lower lobe.", {"L": "nodule"}),
    ("Centrilobular emphysema.", {"L": "emphysema"}),
    ("Paraseptal emphysematous changes at the lung apices.", {"L": "emphysema"}),
    ("Apical blebs.", {"L": "emphysema"}),
    ("Small right pleural effusion.", {"L": "effusion"}),
    ("Moderate bilateral pleural effusions with adjacent compressive atelectasis.",
     {"L": ("effusion", "atelectasis")}),
    ("Trace left hydrothorax.", {"L": "effusion"}),
    ("Layering fluid in the right hemithorax.", {"L": "effusion"}),
    # lungs / pleura: negated
    ("No pleural effusion.", {"L": "n"}),
    ("No pulmonary nodules.", {"L": "n"}),
    ("The lungs are clear without focal consolidation.", {"L": "n"}),
    ("No pneumothorax or pleural effusion.", {"L": "n"}),
    ("No suspicious pulmonary nodule or mass.", {"L": "n"}),
    ("Negative for emphysema.", {"L": "n"}),
    ("Previously seen left pleural effusion has resolved.", {"L": "n"}),
    ("No evidence of atelectasis in the lung bases.", {"L": "n"}),
    # lungs / pleura: mention only
    ("The lungs are clear.", {"L": "m"}),
    ("The pleural spaces are clear.", {"L": "m"}),
    ("Lung bases are clear.", {"L": "m"}),
    # lungs / pleura: vetoes
    ("Mild bibasilar scarring.", {"L": "v"}),
    ("Small right pneumothorax.", {"L": "v"}),
    ("Patchy consolidation in the right lower lobe.", {"L": "v"}),
    ("Possible small left pleural effusion.", {"L": "v"}),
    ("A 3 mm lung nodule cannot be excluded.", {"L": "v"}),
    ("Findings suspicious for pneumonia in the left lower lobe.", {"L": "v"}),
    ("Mild bronchial wall thickening.", {"L": "v"}),
    # liver / gallbladder: positives
    ("Fatty liver.", {"H": "fatty"}),
    ("Diffuse hepatic steatosis.", {"H": "fatty"}),
    ("Fatty infiltration of the liver.", {"H": "fatty"}),
    ("Cholelithiasis.", {"H": "hepatobiliary_calcification"}),
    ("Multiple gallstones.", {"H": "hepatobiliary_calcification"}),
    ("A 1 cm stone in the gallbladder neck.", {"H": "hepatobiliary_calcification"}),
    ("Punctate calcification in the right hepatic lobe.", {"H": "hepatobiliary_calcification"}),
    ("A 2.3 cm hypodense lesion in hepatic segment 4.", {"H": "lesion"}),
    ("Several lesions in the liver, e.g. segment 7, measure up to 9 mm.", {"H": "lesion"}),
    ("Hepatic hemangioma in segment 6.", {"H": "lesion"}),
    ("Simple cyst in the left lobe of the liver.", {"H": "lesion"}),
    ("Liver metastases.", {"H": "lesion"}),
    ("Hepatocellular carcinoma in the right lobe.", {"H": "lesion"}),
    ("No interval change in the hepatic hemangioma.", {"H": "lesion"}),
    ("Intrahepatic biliary dilatation.", {"H": "dilation"}),
    ("The common bile duct is dilated to 11 mm.", {"H": "dilation"}),
    ("Mild extrahepatic biliary ductal dilatation.", {"H": "dilation"}),
    # liver / gallbladder: negated
    ("No focal hepatic lesion.", {"H": "n"}),
    ("No biliary dilation.", {"H": "n"}),
    ("No intrahepatic or extrahepatic biliary ductal dilatation.", {"H": "n"}),
    ("No gallstones.", {"H": "n"}),
    ("Gallstones without cholecystitis.", {"H": "n"}),
    ("The liver is without focal lesions.", {"H": "n"}),
    ("Negative for hepatic steatosis.", {"H": "n"}),
    ("No hepatic mass.", {"H": "n"}),
    # liver / gallbladder: mention only
    ("The liver is normal in size and attenuation.", {"H": "m"}),
    ("Gallbladder is unremarkable.", {"H": "m"}),
    ("The liver is unremarkable.", {"H": "m"}),
    ("The common bile duct measures 4 mm.", {"H": "m"}),
    # liver / gallbladder: vetoes
    ("Cirrhotic liver morphology.", {"H": "v"}),
    ("Hepatomegaly.", {"H": "v"}),
    ("Status post cholecystectomy.", {"H": "v"}),
    ("Gallbladder sludge.", {"H": "v"}),
    ("Possible fatty infiltration of the liver.", {"H": "v"}),
    ("A small hepatic lesion cannot be excluded.", {"H": "v"}),
    ("Mild gallbladder wall thickening.", {"H": "v"}),
    # kidneys / ureters: positives
    ("A 4 mm nonobstructing stone in the left kidney.", {"K": "stone"}),
    ("Bilateral nephrolithiasis.", {"K": "stone"}),
    ("Dr. Lee was notified of the 2.1 cm left renal stone.", {"K": "stone"}),
    ("Right ureteral calculus at the ureterovesical junction.", {"K": "stone"}),
    ("Punctate calcifications in both kidneys.", {"K": "stone"}),
    ("Enhancing mass in the right kidney measuring 3 cm.", {"K": "lesion"}),
    ("Indeterminate lesion in the left kidney.", {"K": "lesion"}),
    ("Renal cell carcinoma in the left kidney.", {"K": "lesion"}),
    ("Angiomyolipoma in the right kidney.", {"K": "lesion"}),
    ("Right renal atrophy.", {"K": "atrophy"}),
    ("Atrophic left kidney.", {"K": "atrophy"}),
    ("Renal cortical thinning bilaterally.", {"K": "atrophy"}),
    ("Simple cyst in the right kidney.", {"K": "cyst"}),
    ("Bilateral renal cysts.", {"K": "cyst"}),
    ("Polycystic kidney disease.", {"K": "cyst"}),
    ("A Bosniak 2 cyst in the left kidney.", {"K": "cyst"}),
    # kidneys / ureters: negated
    ("No hydronephrosis.", {"K": "n"}),
    ("No renal or ureteral calculi.", {"K": "n"}),
    ("The kidneys are without stones or masses.", {"K": "n"}),
    ("No suspicious renal mass.", {"K": "n"}),
    ("No hydronephrosis or hydroureter.", {"K": "n"}),
    ("Negative for renal cysts.", {"K": "n"}),
    # kidneys / ureters: mention only
    ("The kidneys enhance symmetrically.", {"K": "m"}),
    ("Kidneys are normal in size.", {"K": "m"}),
    ("The ureters are normal in caliber.", {"K": "m"}),
    # kidneys / ureters: vetoes
    ("Mild left hydronephrosis.", {"K": "v"}),
    ("Status post right nephrectomy.", {"K": "v"}),
    ("Mild right perinephric stranding.", {"K": "v"}),
    ("Possible small renal stone.", {"K": "v"}),
    ("Duplicated left collecting system.", {"K": "v"}),
    ("A horseshoe kidney.", {"K": "v"}),
    # several systems in one sentence
    ("The liver, gallbladder, and kidneys are unremarkable.", {"H": "m", "K": "m"}),
    ("Cysts in the liver and both kidneys.", {"H": "lesion", "K": "cyst"}),
    ("No pleural effusion or hepatic lesion.", {"L": "n", "H": "n"}),
    ("Small hypodense lesions in the liver and right kidney.", {"H": "lesion", "K": "lesion"}),
    ("Lungs and liver are unremarkable.", {"L": "m", "H": "m"}),
    # no localized mention of any studied system
    ("Central airways are patent.", {}),
    ("Unremarkable bowel gas pattern.", {}),
    ("The spleen is normal in size.", {}),
    ("Small left effusion.", {}),
    ("There is a small hypodense lesion.", {}),
    ("Moderate atherosclerotic calcification of the aorta.", {}),
    ("The pancreas is unremarkable.", {}),
    ("No free fluid.", {}),
    ("Degenerative changes of the spine.", {}),
    ("Stable postsurgical changes of the abdominal wall.", {}),
    ("The urinary bladder is unremarkable.", {}),
]

HISTORIES = [
    "Abdominal pain.",
    "Evaluate for kidney stone.",
    "Cancer staging.",
    "Cough and fever, rule out pneumonia.",
    "Trauma.",
    "Weight loss.",
]

# text after the findings section must never be labeled
IMPRESSIONS = [
    "Pulmonary nodule.",
    "Fatty liver.",
    "Right renal stone.",
    "No acute abnormality.",
    "Large left pleural effusion.",
    "Cirrhosis.",
]

PROTOCOL_TEXT = {
    "chest": "CT chest with contrast",
    "abdomen_pelvis": "CT abdomen and pelvis with contrast",
    "chest_abdomen_pelvis": "CT chest, abdomen and pelvis with contrast",
    "chest_abdomen": "CT chest and abdomen without contrast",
    "abdomen": "CT abdomen without contrast",
}


def effects(snippet_effects: dict) -> dict[str, tuple[str, ...]]:
    out = {}
    for code, eff in snippet_effects.items():
        out[SYS[code]] = eff if isinstance(eff, tuple) else (eff,)
    return out


def gold_for(snippets: list[int], systems: tuple[str, ...]) -> list[dict]:
    """Aggregate hand-declared sentence effects into per-system gold rows."""
    rows = []
    for system in systems:
        mentioned, vetoed, positives = False, False, set()
        for i in snippets:
            for eff in effects(SNIPPETS[i][1]).get(system, ()):
                mentioned = True
                if eff == "v":
                    vetoed = True
                elif eff in CLASSES[system]:
                    positives.add(eff)
                elif eff not in ("m", "n"):
                    raise ValueError(f"bad effect {eff!r} in snippet {i}")
        if not mentioned:
            status = "uncertain"
        elif positives or vetoed:
            status = "has_findings"
        else:
            status = NORMAL
        labels = {c: int(c in positives) for c in CLASSES[system]}
        labels[NORMAL] = int(status == NORMAL)
        usable = status == NORMAL or bool(positives)
        rows.append({"system": system, "status": status, "labels": labels, "usable": usable})
    return rows


def render_findings(sentences: list[str], layout: str) -> str:
    if layout == "numbered":
        return "\n".join(f"{k}. {s}" for k, s in enumerate(sentences, 1))
    if layout == "lines":
        return "\n".join(sentences)
    return " ".join(sentences)


def render_report(protocol: str, history: str, findings: str | None, impression: str) -> str:
    parts = [f"EXAM: {PROTOCOL_TEXT[protocol]}", f"HISTORY: {history}", ""]
    if findings is not None:
        parts += ["FINDINGS:", findings, ""]
    parts += ["IMPRESSION:", impression]
    return "\n".join(parts)


def build(seed: int = SEED, n_regular: int = 320):
    rng = random.Random(seed)
    n_patients = 150
    patients = [f"P{k:04d}" for k in range(1, n_patients + 1)]
    order = list(range(len(SNIPPETS)))
    rng.shuffle(order)
    pool = list(order)  # first pass guarantees every snippet is used

    records, gold = [], []
    counter = 0

    def next_id():
        nonlocal counter
        counter += 1
        return f"R{counter:05d}"

    def date():
        return f"{rng.randint(2015, 2020)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"

    kept = []
    for _ in range(n_regular):
        k = rng.randint(2, 6)
        chosen = []
        while len(chosen) < k:
            i = pool.pop() if pool else rng.randrange(len(SNIPPETS))
            if i not in chosen:
                chosen.append(i)
        protocol = rng.choices(list(PROTOCOL_TEXT), weights=[2, 3, 4, 1, 1])[0]
        layout = rng.choice(["prose", "prose", "lines", "numbered"])
        findings = render_findings([SNIPPETS[i][0] for i in chosen], layout)
        rec = {
            "report_id": next_id(),
            "patient_id": rng.choice(patients),
            "study_date": date(),
            "protocol": protocol,
            "body": True,
            "text": render_report(protocol, rng.choice(HISTORIES), findings, rng.choice(IMPRESSIONS)),
        }
        records.append(rec)
        systems = ("lungs_pleura",) if protocol == "chest" else tuple(CLASSES)
        kept.append((rec, chosen, systems))

    # incomplete: no findings header, or an empty section
    for j in range(8):
        findings = None if j % 2 == 0 else ""
        records.append({
            "report_id": next_id(), "patient_id": rng.choice(patients), "study_date": date(),
            "protocol": "abdomen_pelvis", "body": True,
            "text": render_report("abdomen_pelvis", rng.choice(HISTORIES), findings, "Fatty liver."),
        })
    # non-body studies
    for _ in range(6):
        chosen = rng.sample(range(len(SNIPPETS)), 3)
        records.append({
            "report_id": next_id(), "patient_id": rng.choice(patients), "study_date": date(),
            "protocol": "other", "body": False,
            "text": render_report("abdomen", "Headache.", render_findings([SNIPPETS[i][0] for i in chosen], "prose"),
                                  "No acute abnormality."),
        })
    # duplicates: same patient and findings, later date, altered case and spacing
    for rec, chosen, _ in kept[:10]:
        text = rec["text"].replace("FINDINGS:\n", "FINDINGS:\n  ")
        findings_start = text.index("FINDINGS:")
        text = text[:findings_start] + text[findings_start:].replace(". ", ".  ")
        y = int(rec["study_date"][:4]) + 1
        records.append({
            "report_id": next_id(), "patient_id": rec["patient_id"], "study_date": f"{y}{rec['study_date'][4:]}",
            "protocol": rec["protocol"], "body": True, "text": text,
        })

    for rec, chosen, systems in kept:
        for row in gold_for(chosen, systems):
            gold.append({"report_id": rec["report_id"], "patient_id": rec["patient_id"], **row})
    return records, gold


def write_gold(path: Path, gold: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for g in gold:
            cells = [str(g["labels"][c]) if c in g["labels"] else "" for c in LABEL_COLUMNS]
            w.writerow([g["report_id"], g["patient_id"], g["system"], g["status"], int(g["usable"]), *cells, ""])


def write_predictions(path: Path, gold: list[dict], seed: int = SEED) -> None:
    """Scores loosely tracking the gold labels, one per usable (volume, label)."""
    rng = np.random.default_rng(seed)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["volume_id", "label_id", "score"])
        for g in gold:
            if not g["usable"]:
                continue
            for label, y in g["labels"].items():
                z = rng.normal(1.2 * y, 1.0)
                w.writerow([g["report_id"], f"{g['system']}.{label}", f"{1.0 / (1.0 + np.exp(-z)):.6f}"])


def write_phantom(out: Path, seed: int = SEED) -> None:
    """Small CT-like phantom (1 x 1 x 2.5 mm) with a kidney mask, for the prep subcommand."""
    rng = np.random.default_rng(seed)
    shape = (40, 64, 64)  # z, y, x
    z, y, x = np.indices(shape)
    body = ((y - 34) / 27.0) ** 2 + ((x - 32) / 29.0) ** 2 <= 1.0
    vol = np.where(body, 40.0, -1000.0) + rng.normal(0.0, 10.0, shape)
    kidney = (((z - 20) / 8.0) ** 2 + ((y - 46) / 6.0) ** 2 + ((x - 20) / 5.0) ** 2) <= 1.0
    vol[kidney] = 150.0
    for name, arr, dtype in (("phantom_ct", np.rint(vol), "<i2"), ("phantom_kidney_mask", kidney, "|u1")):
        arr.astype(dtype).tofile(out / f"{name}.raw")
        meta = {"size": list(shape), "spacing": [2.5, 1.0, 1.0], "origin": [0.0, 0.0, 0.0], "dtype": dtype}
        (out / f"{name}.raw.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


GOLDEN_FILES = ("labels.csv", "split.csv", "agreement.csv", "prevalence.csv", "cooccurrence.csv", "roc.csv")


def pipeline(out_dir: Path, jobs: int = 1) -> None:
    """Run the bundled-fixture pipeline through the CLI entry point."""
    from bodyct.cli import run_subcommand

    b = "bundled:"
    o = str(out_dir)
    steps = [
        ["ingest", "--corpus", b + "synthetic_reports.jsonl", "--out", o],
        ["label", "--corpus", f"{o}/ingested.jsonl", "--out", o],
        ["split", "--labels", f"{o}/labels.csv", "--out", o],
        ["stats", "prevalence", "--labels", f"{o}/labels.csv", "--split", f"{o}/split.csv", "--out", o],
        ["stats", "cooccurrence", "--labels", f"{o}/labels.csv", "--out", o],
        ["eval", "labels", "--labels", f"{o}/labels.csv", "--reference", b + "gold_labels.csv", "--out", o],
        ["eval", "roc", "--predictions", b + "predictions.csv", "--reference", b + "gold_labels.csv", "--out", o],
    ]
    for argv in steps:
        code = run_subcommand(["--jobs", str(jobs), *argv])
        if code != 0:
            raise SystemExit(f"pipeline step failed ({code}): {' '.join(argv)}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/bodyct/data/fixtures"))
    ap.add_argument("--seed", type=int, default=SEED)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, gold = build(args.seed)
    with open(out / "synthetic_reports.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    write_gold(out / "gold_labels.csv", gold)
    write_predictions(out / "predictions.csv", gold, args.seed)
    write_phantom(out, args.seed)
    import contextlib
    import io
    import shutil
    import tempfile

    golden = out / "golden"
    golden.mkdir(exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        with contextlib.redirect_stdout(io.StringIO()):
            pipeline(Path(tmp))
        for name in GOLDEN_FILES:
            shutil.copyfile(Path(tmp) / name, golden / name)
    print(f"{len(records)} reports, {len(gold)} gold rows -> {out}")


if __name__ == "__main__":
    main()
