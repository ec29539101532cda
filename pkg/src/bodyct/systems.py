"""Organ systems and the fixed 15-label menu shared by every stage."""

from __future__ import annotations

SYSTEMS = ("lungs_pleura", "liver_gallbladder", "kidneys_ureters")

DISEASES = {
    "lungs_pleura": ("atelectasis", "nodule", "emphysema", "effusion"),
    "liver_gallbladder": ("hepatobiliary_calcification", "lesion", "dilation", "fatty"),
    "kidneys_ureters": ("stone", "lesion", "atrophy", "cyst"),
}

NORMAL = "no_apparent_disease"

# protocols whose abdomen is not imaged
ABDOMINAL_SYSTEMS = ("liver_gallbladder", "kidneys_ureters")


def labels_for(system: str) -> tuple[str, ...]:
    return DISEASES[system] + (NORMAL,)


def label_id(system: str, label: str) -> str:
    return f"{system}.{label}"


def all_label_ids() -> list[str]:
    """Canonical ordering of the 15 labels, system by system, normal last."""
    return [label_id(s, lab) for s in SYSTEMS for lab in labels_for(s)]


def split_label_id(lid: str) -> tuple[str, str]:
    system, _, label = lid.partition(".")
    if system not in DISEASES or label not in labels_for(system):
        raise ValueError(f"unknown label id {lid!r}")
    return system, label


def check_system(system: str) -> str:
    if system not in DISEASES:
        raise ValueError(f"unknown organ system {system!r}; expected one of {', '.join(SYSTEMS)}")
    return system
