"""A scripted hallucination scenario for the mock backends.

A 60-second clip of five scenes. The quick preview captions one frame per
scene; the frame at 46 s is captioned "a boy holds a teddy bear" although
the VQA model (truthfully) sees a bag. The chat script reacts only to what
is in its prompt, so the outcome is decided by the session loop:

* with verification the false caption is contradicted, the agent searches
  for the bag, the new evidence is confirmed and option 0 ("a bag") wins;
* without verification the caption goes unchallenged and option 1
  ("a teddy bear") is chosen straight from the preview.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cogniloop.media import FrameIndexTable
from cogniloop.mock import MockScript

VIDEO_ID = "teddy"
N_FRAMES = 60
SCENES = ((0, 12), (13, 23), (24, 36), (37, 55), (56, 59))
SCENE_CENTERS = (6, 18, 30, 46, 57)
SCENE_CAPTIONS = (
    "a kitchen with a table",
    "a hallway with a door",
    "a living room with a sofa",
    "a boy stands in a yard",
    "a street with parked cars",
)
SEARCH_PEAKS = (3, 15, 27, 40, 51)
QUERY = "boy with bag"
HALLUCINATED_FRAME = 46
HALLUCINATION = "a boy holds a teddy bear"
TRUTH = "a bag"
SEARCH_CAPTION = "a boy carries a bag"

QUESTION = "What is the boy holding in the video?"
OPTIONS = ("a bag", "a teddy bear", "a ball", "a phone", "a book")
CORRECT = 0
FOOLED = 1

LATENCY = {"llm": 1.0, "caption": 0.5, "qa": 0.25, "embedding": 0.125, "retrieval": 0.0625}

_SUFFICIENCY = r"(?s)^You are a Reflection Agent\. Analyze working memory"
_VERIFY = r"(?s)^You are a Reflection Agent analyzing the latest observation"
_CROSSCHECK = r"(?s)^You are a Reflection Agent cross-checking"


def frame_vectors() -> np.ndarray:
    """Scene one-hot + a small alternating noise dim + a query dim with peaks."""
    vecs = np.zeros((N_FRAMES, len(SCENES) + 2))
    for s, ((lo, hi), center) in enumerate(zip(SCENES, SCENE_CENTERS)):
        sign = 1.0
        for f in range(lo, hi + 1):
            vecs[f, s] = 1.0
            if f != center:
                vecs[f, -2] = 0.3 * sign
                sign = -sign
    for p in SEARCH_PEAKS:
        vecs[p - 2 : p + 3, -1] = (0.15, 0.3, 0.6, 0.3, 0.15)
    return vecs


def table(image_dir: str = "") -> FrameIndexTable:
    return FrameIndexTable.synthetic(VIDEO_ID, 1.0, N_FRAMES, image_dir)


def script(latency: bool = True) -> MockScript:
    tbl = table()
    vecs = frame_vectors()
    query = np.zeros(vecs.shape[1])
    query[-1] = 1.0

    captions = {}
    for s, (lo, hi) in enumerate(SCENES):
        for f in range(lo, hi + 1):
            captions[tbl.frames[f].key] = SCENE_CAPTIONS[s]
    for p in SEARCH_PEAKS:
        captions[tbl.frames[p].key] = SEARCH_CAPTION
    key46 = tbl.frames[HALLUCINATED_FRAME].key

    search_t = f"{float(SEARCH_PEAKS[3]):.1f}"
    chat = [
        {
            "pattern": _SUFFICIENCY + r".*\[VERIFIED\]",
            "reply": "Analysis: The boy is verified to carry a bag.\nDecision: terminate\nFinal Answer: 0",
        },
        {
            "pattern": _SUFFICIENCY + r".*\[CONTRADICTED",
            "reply": "Analysis: The teddy bear caption was contradicted; the held object is unknown.\n"
            "Decision: continue\n"
            "Guidance: Use divergent_search to find frames of the boy with a bag across the whole video.",
        },
        {
            "pattern": _SUFFICIENCY,
            "reply": "Analysis: The preview shows the boy holding a teddy bear.\nDecision: terminate\nFinal Answer: 1",
        },
        {
            "pattern": _VERIFY + r".*" + HALLUCINATION,
            "reply": "Key Information: YES\n"
            "Verification Questions: [('What is the boy holding?', 46.0), ('Is the boy holding a teddy bear?', 46.0)]",
        },
        {
            "pattern": _VERIFY + r".*" + SEARCH_CAPTION,
            "reply": "Key Information: YES\n"
            f"Verification Questions: [('What is the boy holding?', {search_t}), "
            f"('Is the boy carrying a bag?', {search_t})]",
        },
        {"pattern": _VERIFY, "reply": "Key Information: NO"},
        {"pattern": _CROSSCHECK + r".*" + HALLUCINATION, "reply": "Claim 1: contradicted"},
        {"pattern": _CROSSCHECK, "reply": "Claim 1: confirmed"},
        {
            "pattern": r"^You are a Perception Agent",
            "reply": f"Tool Name: divergent\\_search\nTool Input: ('{QUERY}', (0.0, {N_FRAMES - 1:.1f}))",
        },
    ]
    vqa = [
        {"frame": key46, "pattern": "teddy bear", "answer": "No, the boy is holding a bag."},
        {"frame": key46, "pattern": "holding", "answer": "It is a bag."},
        {"frame": f"*@{SEARCH_PEAKS[3]:.2f}", "pattern": "", "answer": "Yes, the boy carries a bag."},
    ]
    embeddings = {f.key: vecs[f.index].tolist() for f in tbl.frames}
    embeddings[f"text:{QUERY}"] = query.tolist()
    return MockScript(
        chat_responses=chat,
        caption_map=captions,
        vqa_map=vqa,
        embedding_map=embeddings,
        hallucination_overrides=[{"frame": key46, "caption": HALLUCINATION}],
        latency=dict(LATENCY) if latency else {},
        embedding_dim=vecs.shape[1],
    )


@dataclass(frozen=True)
class Expectation:
    answer_index: int
    frames: int


# preview frames + search frames; verification VQA lands on already-captioned frames
WITH_VERIFICATION = Expectation(CORRECT, len(SCENE_CENTERS) + len(SEARCH_PEAKS))
WITHOUT_VERIFICATION = Expectation(FOOLED, len(SCENE_CENTERS))
