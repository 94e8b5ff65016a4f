"""Prompt templates used to obtain multi-level knowledge from a multimodal LLM.

Two knowledge levels are covered by seven knowledge ids:

* target level: ``Ka`` (a hand-crafted photo caption rendered locally) and
  ``Kb`` (a morphology description obtained with the text-only prompt P1);
* scene level: ``Kc`` (global scene, P2) plus the four camouflage aspects
  ``Kd``/``Ke``/``Kf``/``Kg`` (colour/texture/shape/lighting, P3..P6), all
  obtained with the image attached.

Template bodies are fixed strings with a ``[CLS]`` placeholder; the curly
quotes inside P3..P6 are intentional and must be preserved byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError

CLS_PLACEHOLDER = "[CLS]"

KNOWLEDGE_IDS = ("Ka", "Kb", "Kc", "Kd", "Ke", "Kf", "Kg")

# Knowledge id -> prompt id that produces it. Ka is rendered locally and
# never sent to a backend.
PROMPT_FOR_KNOWLEDGE = {
    "Ka": "Ka",
    "Kb": "P1",
    "Kc": "P2",
    "Kd": "P3",
    "Ke": "P4",
    "Kf": "P5",
    "Kg": "P6",
}


@dataclass(frozen=True)
class PromptTemplate:
    """A fixed prompt body with a class-name placeholder.

    ``requires_image`` marks the scene prompts (P2..P6); P1 and the local
    caption Ka are text-only.
    """

    id: str
    body: str
    requires_image: bool

    def __post_init__(self):
        if CLS_PLACEHOLDER not in self.body:
            raise ValidationError(f"template {self.id} has no {CLS_PLACEHOLDER} placeholder")


_SCENE_QUESTION = (
    "Within this scene, how does the [CLS] blend in the environment? "
    "Please describe it from the perspective of “{aspect}” in one sentence."
)

TEMPLATES = {
    "Ka": PromptTemplate("Ka", "A photo of a [CLS].", requires_image=False),
    "P1": PromptTemplate(
        "P1",
        "This is a picture of a [CLS] hidden in the background, please give me a brief "
        "description based only on the morphological information of a general [CLS] "
        "(Only describe physical characteristics, do not need to describe life habits "
        "and so on). No more than 50 words.",
        requires_image=False,
    ),
    "P2": PromptTemplate(
        "P2",
        "Please use detailed language to describe the entire scene in the given image "
        "of a [CLS].No more than 30 words.",
        requires_image=True,
    ),
    "P3": PromptTemplate("P3", _SCENE_QUESTION.format(aspect="colour"), requires_image=True),
    "P4": PromptTemplate("P4", _SCENE_QUESTION.format(aspect="texture"), requires_image=True),
    "P5": PromptTemplate("P5", _SCENE_QUESTION.format(aspect="shape"), requires_image=True),
    "P6": PromptTemplate(
        "P6",
        _SCENE_QUESTION.format(aspect="environment lighting condition"),
        requires_image=True,
    ),
}


def render_prompt(template: PromptTemplate, class_name: str) -> str:
    """Replace every ``[CLS]`` occurrence in the template body with ``class_name``.

    The rest of the body is returned byte-identical. The class name must be
    non-empty and single-line.
    """
    if not class_name:
        raise ValidationError("class_name must be non-empty")
    if "\n" in class_name or "\r" in class_name:
        raise ValidationError("class_name must not contain newlines")
    return template.body.replace(CLS_PLACEHOLDER, class_name)
