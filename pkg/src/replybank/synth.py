"""Synthetic two-party conversation generator with ground-truth labels.

Real consultation data is private, so the test corpus is generated: each
conversation is a few rounds of (patient cue, doctor response), where the
doctor response is a paraphrase drawn from one of K intent families and
the patient cue carries tokens distinctive of that family.  Paraphrases
within a family differ from a family base sentence by at most one dropped
token, so their pairwise token-set overlap stays high while cross-family
overlap stays low.  A sidecar file records the family of every doctor
turn, giving downstream recovery tests an exact oracle.

Generation is deterministic per seed, byte for byte.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

from .corpus import ValidationError

# Base sentences for doctor intent families.  Tokens within a base are
# unique so single-token drops always yield distinct variants, and
# content words barely overlap across families to keep cross-family
# token-set similarity low.
_FAMILY_BASES = [
    ("ask-duration", "how long have you been having these symptoms overall", "i have started feeling unwell lately"),
    ("ask-severity", "can you rate your pain from one to ten for me", "the pain is really strong today"),
    ("ask-fever", "did you measure any fever or high temperature recently at home", "i think i might have a temperature"),
    ("advise-fluids", "please drink plenty of water and clear fluids during recovery", "my throat feels very dry and scratchy"),
    ("advise-rest", "try to rest as much as possible over the next days", "i feel exhausted after work every evening"),
    ("ask-medication", "are you currently taking any regular medication or supplements", "i sometimes use tablets from the pharmacy"),
    ("ask-allergies", "do you know of allergies to penicillin or other drugs", "certain foods make my skin itch"),
    ("advise-paracetamol", "you can take paracetamol every six hours against the ache", "my head keeps hurting since yesterday"),
    ("ask-appetite", "has your appetite changed or decreased since this started", "eating meals feels like a chore now"),
    ("ask-sleep", "how many hours of sleep do you usually get", "i keep waking up during most nights"),
    ("advise-doctor-visit", "please book an appointment with your local practice this week", "should somebody examine this in person"),
    ("ask-cough", "is the cough dry or are you bringing up phlegm", "my chest rattles whenever i breathe deeply"),
    ("ask-breathing", "do you ever feel short of breath climbing normal stairs", "walking uphill leaves me gasping quickly"),
    ("advise-monitor", "keep a diary of readings and send them to me", "what numbers should i write down daily"),
    ("ask-stomach", "have you noticed nausea vomiting or loose stools lately", "my stomach has been upset since sunday"),
    ("advise-ice", "apply an ice pack wrapped in cloth for twenty minutes", "the ankle swelled right after the fall"),
    ("ask-history", "does anyone in your family suffer from heart disease", "my relatives had various conditions when older"),
    ("advise-stretching", "gentle stretching each morning should ease the stiff muscles", "my back locks up when i wake"),
    ("ask-stress", "would you say work or home life causes much stress", "everything has felt overwhelming this month honestly"),
    ("signoff-name", "take care {patient} and message me with any updates", "thank you so much for the help {doctor}"),
    ("ask-vision", "have you experienced blurred vision or spots while reading", "small letters swim around on the page"),
    ("advise-gargle", "gargle with warm salted liquid twice daily until friday", "swallowing feels rough on the left side"),
    ("ask-weight", "has your weight shifted noticeably in either direction recently", "my clothes fit differently than before"),
    ("advise-sunscreen", "use a strong sunscreen outdoors even under cloudy skies", "my skin burns after short garden breaks"),
]

_PATIENT_NAMES = ["Alex", "Sam", "Jordan", "Riley", "Casey", "Morgan"]
_DOCTOR_NAMES = ["Lee", "Patel", "Kim", "Garcia", "Chen", "Novak"]

_OPENERS = [
    "hello doctor",
    "hi there",
    "good morning",
    "hey i need some advice",
]
_ACKS = [
    "okay i understand",
    "yes that makes sense",
    "alright i will",
    "sure thing",
]

MAX_VARIANTS_PER_FAMILY = 7


@dataclass(frozen=True)
class IntentFamily:
    intent_id: int
    name: str
    variants: tuple[str, ...]  # doctor paraphrases, base first
    cue: str  # patient cue template preceding this intent


def build_families(num_classes: int) -> list[IntentFamily]:
    if num_classes < 2:
        raise ValidationError("need at least 2 intent families")
    if num_classes > len(_FAMILY_BASES):
        raise ValidationError(
            f"at most {len(_FAMILY_BASES)} intent families are available"
        )
    families = []
    for intent_id, (name, base, cue) in enumerate(_FAMILY_BASES[:num_classes]):
        tokens = base.split()
        variants = [base]
        # Drop one token at a time, skipping positions that hold a name
        # placeholder.  Pairwise token-set Jaccard stays >= (L-2)/L.
        for pos in range(len(tokens)):
            if len(variants) >= MAX_VARIANTS_PER_FAMILY:
                break
            if "{" in tokens[pos]:
                continue
            variants.append(" ".join(tokens[:pos] + tokens[pos + 1 :]))
        families.append(IntentFamily(intent_id, name, tuple(variants), cue))
    return families


def _fill_names(template: str, rng: random.Random) -> tuple[str, list[list]]:
    """Replace {patient}/{doctor} slots with sampled names and return the
    text plus its identity spans."""
    spans: list[list] = []
    out: list[str] = []
    pos = 0
    for part in template.split(" "):
        if out:
            pos += 1  # joining space
        if part == "{patient}":
            name = rng.choice(_PATIENT_NAMES)
            spans.append([pos, pos + len(name), "patient"])
            part = name
        elif part == "{doctor}":
            name = rng.choice(_DOCTOR_NAMES)
            spans.append([pos, pos + len(name), "doctor"])
            part = name
        out.append(part)
        pos += len(part)
    return " ".join(out), spans


def _patient_messages(cue_text, cue_spans, rng: random.Random) -> list[dict]:
    """Occasionally split a patient turn into consecutive messages to
    exercise turn merging at ingestion."""
    words = cue_text.split(" ")
    if cue_spans or len(words) < 4 or rng.random() >= 0.3:
        msg = {"speaker": "patient", "text": cue_text}
        if cue_spans:
            msg["pii"] = cue_spans
        return [msg]
    cut = rng.randint(1, len(words) - 1)
    return [
        {"speaker": "patient", "text": " ".join(words[:cut])},
        {"speaker": "patient", "text": " ".join(words[cut:])},
    ]


def generate_corpus(
    num_classes: int, num_conversations: int, seed: int
) -> tuple[list[dict], dict]:
    """Conversations (as corpus JSONL records) and the ground-truth
    sidecar mapping each doctor turn to its intent family."""
    if num_conversations < num_classes:
        raise ValidationError("need at least one conversation per intent family")
    families = build_families(num_classes)
    rng = random.Random(seed)
    conversations = []
    turn_labels = []
    for conv_no in range(num_conversations):
        conv_id = f"synth-{conv_no:05d}"
        rounds = rng.randint(2, min(4, num_classes))
        intents = rng.sample(families, rounds)
        messages: list[dict] = []
        turn_index = 0
        for round_no, family in enumerate(intents):
            cue = family.cue
            if round_no == 0:
                cue = f"{rng.choice(_OPENERS)} {cue}"
            elif rng.random() < 0.4:
                cue = f"{rng.choice(_ACKS)} {cue}"
            cue_text, cue_spans = _fill_names(cue, rng)
            messages.extend(_patient_messages(cue_text, cue_spans, rng))
            turn_index += 1  # merged patient turn
            doctor_text, doctor_spans = _fill_names(rng.choice(family.variants), rng)
            msg = {"speaker": "doctor", "text": doctor_text}
            if doctor_spans:
                msg["pii"] = doctor_spans
            messages.append(msg)
            turn_labels.append(
                {"conversationId": conv_id, "turnIndex": turn_index, "intentId": family.intent_id}
            )
            turn_index += 1
        conversations.append({"id": conv_id, "messages": messages})
    sidecar = {
        "seed": seed,
        "numClasses": num_classes,
        "numConversations": num_conversations,
        "families": [
            {
                "intentId": f.intent_id,
                "name": f.name,
                "variants": [_normalized_variant(v) for v in f.variants],
            }
            for f in families
        ],
        "turnLabels": turn_labels,
    }
    return conversations, sidecar


def _normalized_variant(template: str) -> str:
    return (
        template.replace("{patient}", "<patient_name>")
        .replace("{doctor}", "<doctor_name>")
    )


def write_corpus(conversations: list[dict], sidecar: dict, path, truth_path=None) -> None:
    truth_path = truth_path or f"{path}.truth.json"
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            fh.write(json.dumps(conv, sort_keys=True) + "\n")
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)
        fh.write("\n")


def truth_intent_by_text(sidecar: dict) -> dict[str, int]:
    """Normalized doctor text -> intent family id."""
    mapping = {}
    for family in sidecar["families"]:
        for variant in family["variants"]:
            mapping[variant] = family["intentId"]
    return mapping
