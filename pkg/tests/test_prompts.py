import pytest
from hypothesis import given, strategies as st

from mlkg.errors import ValidationError
from mlkg.prompts import CLS_PLACEHOLDER, KNOWLEDGE_IDS, TEMPLATES, render_prompt


def test_template_inventory():
    assert set(TEMPLATES) == {"Ka", "P1", "P2", "P3", "P4", "P5", "P6"}
    assert len(KNOWLEDGE_IDS) == 7


def test_placeholder_present_in_every_template():
    for template in TEMPLATES.values():
        assert CLS_PLACEHOLDER in template.body


def test_image_requirements():
    assert not TEMPLATES["Ka"].requires_image
    assert not TEMPLATES["P1"].requires_image
    for pid in ("P2", "P3", "P4", "P5", "P6"):
        assert TEMPLATES[pid].requires_image


def test_render_caption():
    assert render_prompt(TEMPLATES["Ka"], "Mockingbird") == "A photo of a Mockingbird."


def test_render_colour_prompt_exact():
    expected = (
        "Within this scene, how does the Mockingbird blend in the environment? "
        "Please describe it from the perspective of “colour” in one sentence."
    )
    assert render_prompt(TEMPLATES["P3"], "Mockingbird") == expected


def test_p1_replaces_every_occurrence():
    rendered = render_prompt(TEMPLATES["P1"], "platypus")
    assert CLS_PLACEHOLDER not in rendered
    assert rendered.count("platypus") == TEMPLATES["P1"].body.count(CLS_PLACEHOLDER) == 2


def test_empty_class_name_rejected():
    with pytest.raises(ValidationError):
        render_prompt(TEMPLATES["P2"], "")


def test_newline_class_name_rejected():
    with pytest.raises(ValidationError):
        render_prompt(TEMPLATES["P2"], "a\nb")


def test_render_is_byte_identical_outside_placeholder():
    body = TEMPLATES["P4"].body
    rendered = render_prompt(TEMPLATES["P4"], "X")
    assert rendered == body.replace(CLS_PLACEHOLDER, "X")


@given(st.text(alphabet=st.characters(blacklist_characters="\n\r", blacklist_categories=("Cs",)),
               min_size=1).filter(lambda s: CLS_PLACEHOLDER not in s))
def test_render_idempotent_for_placeholder_free_names(name):
    once = render_prompt(TEMPLATES["P5"], name)
    # rendering the output again must leave it unchanged
    assert once.replace(CLS_PLACEHOLDER, name) == once
