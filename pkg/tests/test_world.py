import numpy as np
import pytest

from videdit.prompts import (
    BOS,
    MAX_TOKENS,
    PAD,
    PromptTriplet,
    default_catalog,
    embed_prompt,
    load_catalog,
    null_embedding,
    padded_tokens,
    parse_scene_prompt,
    save_catalog,
    token_alignment,
    tokenize,
)
from videdit.world import PALETTE, SceneSpec, ToyEmbedder, render_scene, scene_from_prompt, toy_embed_image, toy_embed_text


def test_render_shape_range_and_determinism():
    spec = SceneSpec(shape="square", color="yellow", bg="black", texture=4, frames=5)
    v = render_scene(spec, 16)
    assert v.shape == (1, 3, 5, 16, 16) and v.dtype == np.float32
    assert v.min() >= 0 and v.max() <= 1
    np.testing.assert_array_equal(v, render_scene(spec, 16))
    assert render_scene(spec, (8, 12)).shape == (1, 3, 5, 8, 12)


def test_render_object_colour_at_centre():
    v = render_scene(SceneSpec(color="green", bg="red", size=0.25), 16)
    np.testing.assert_allclose(v[0, :, 0, 8, 8], PALETTE["green"], atol=1e-6)


def test_pan_is_exact_wraparound_shift():
    v = render_scene(SceneSpec(pan=(2, 1), frames=4, allow_exit=True), 16)
    np.testing.assert_allclose(v[0, :, 3], np.roll(v[0, :, 0], (3, 6), axis=(-2, -1)), atol=1e-6)


def test_static_scene_frames_identical():
    v = render_scene(SceneSpec(frames=3), 16)
    assert np.array_equal(v[:, :, 0], v[:, :, 2])


def test_exit_check_and_spec_validation():
    with pytest.raises(ValueError, match="allow_exit"):
        render_scene(SceneSpec(velocity=(2, 0), frames=8), 16)
    with pytest.raises(ValueError):
        SceneSpec(shape="hexagon")
    with pytest.raises(ValueError):
        SceneSpec(color="purple")
    with pytest.raises(ValueError):
        SceneSpec(frames=0)


def test_scene_from_prompt():
    spec = scene_from_prompt("a cyan diamond on a white background", frames=2)
    assert (spec.shape, spec.color, spec.bg, spec.frames) == ("diamond", "cyan", "white", 2)
    with pytest.raises(ValueError):
        scene_from_prompt("something blue")


def test_embeddings_are_unit_and_deterministic():
    emb = ToyEmbedder()
    frame = render_scene(SceneSpec(), 16)[0, :, 0]
    e = emb.image(frame)
    assert np.linalg.norm(e) == pytest.approx(1.0)
    np.testing.assert_array_equal(e, toy_embed_image(frame))
    t = emb.text("a red circle on a blue background")
    assert np.linalg.norm(t) == pytest.approx(1.0)
    np.testing.assert_array_equal(t, toy_embed_text(("red", "circle", "blue", "background")))
    assert emb.frames(render_scene(SceneSpec(frames=3), 16)).shape == (3, e.size)


def test_text_image_alignment_prefers_matching_colours():
    emb = ToyEmbedder()
    scenes = [("red", "blue"), ("green", "black"), ("yellow", "magenta"), ("white", "cyan")]
    frames = [render_scene(SceneSpec(color=c, bg=b, size=0.3), 16)[0, :, 0] for c, b in scenes]
    texts = [emb.text(f"a {c} circle on a {b} background") for c, b in scenes]
    sims = np.array([[emb.image(f) @ t for t in texts] for f in frames])
    assert (sims.argmax(axis=1) == np.arange(len(scenes))).all()


def test_tokenize_and_padding():
    assert tokenize("Make the Circle RED!") == ("make", "circle", "red")
    assert padded_tokens(("x",), 4) == [BOS, "x", PAD, PAD]
    assert len(padded_tokens(tuple("abcdefghij"))) == MAX_TOKENS
    np.testing.assert_array_equal(null_embedding(), embed_prompt(""))
    np.testing.assert_allclose(np.linalg.norm(embed_prompt("a red circle"), axis=1), 1.0, rtol=1e-6)


def test_token_alignment_maps_shared_tokens():
    al = token_alignment("a red circle on a blue background", "a green circle on a blue background")
    # tokens: BOS red circle blue background PAD PAD PAD
    assert list(al) == [0, -1, 2, 3, 4, 5, 6, 7]
    ident = token_alignment("a red circle", "a red circle")
    assert list(ident) == list(range(MAX_TOKENS))


def test_catalog_contents_and_roundtrip(tmp_path):
    cat = default_catalog()
    assert len(cat) == 60
    for tr in cat:
        assert tokenize(tr.input_prompt) != tokenize(tr.edited_prompt)
        parse_scene_prompt(tr.input_prompt)
        parse_scene_prompt(tr.edited_prompt)
    save_catalog(tmp_path / "c.json", cat[:3])
    assert load_catalog(tmp_path / "c.json") == cat[:3]
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ValueError):
        load_catalog(tmp_path / "bad.json")


def test_triplet_validation():
    with pytest.raises(ValueError):
        PromptTriplet("a red circle", "do nothing", "a red circle")
    with pytest.raises(ValueError):
        PromptTriplet("", "x", "y")
    assert PromptTriplet("a red circle", "keep same", "a red circle").is_identity
