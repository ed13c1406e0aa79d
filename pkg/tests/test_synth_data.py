import numpy as np
import pytest

from morphtok.features.synth_data.dataset import (
    all_one_object_scenes,
    gen_dataset,
    load_dataset,
    random_scene,
    split_of,
    write_dataset,
)
from morphtok.features.synth_data.edits import apply_instruction, make_edit
from morphtok.features.synth_data.grammar import (
    IDENTITY_INSTRUCTION,
    caption,
    decode_text,
    encode_text,
    parse_caption,
)
from morphtok.features.synth_data.render import (
    BACKGROUND,
    CELL_PX,
    PALETTE,
    parse_image,
    render,
    try_parse_image,
)
from morphtok.features.synth_data.scene import GRID_SIZE, Scene
from morphtok.utils.errors import MorphError


def test_render_single_object_touches_only_its_cell():
    image = render(Scene.of(("circle", "red", (0, 0))))
    assert image.shape == (32, 32, 3) and image.dtype == np.uint8
    for row in range(GRID_SIZE):
        for col in range(GRID_SIZE):
            cell = image[row * CELL_PX:(row + 1) * CELL_PX, col * CELL_PX:(col + 1) * CELL_PX].reshape(-1, 3)
            has_red = bool((cell == PALETTE["red"]).all(axis=1).any())
            only_background = bool((cell == BACKGROUND).all())
            if (row, col) == (0, 0):
                assert has_red
            else:
                assert only_background


def test_caption_grammar_is_exhaustively_invertible_on_one_object_scenes():
    scenes = all_one_object_scenes()
    assert len(scenes) == 3 * 4 * 16
    captions = {caption(s) for s in scenes}
    assert len(captions) == len(scenes)
    for scene in scenes:
        assert parse_caption(caption(scene)) == scene


def test_random_scenes_round_trip_through_caption_and_image(rng):
    for _ in range(300):
        scene = random_scene(rng)
        assert parse_caption(caption(scene)) == scene
        assert parse_image(render(scene)) == scene


def test_parse_image_tolerates_one_level_of_noise(rng):
    for _ in range(50):
        scene = random_scene(rng)
        noise = rng.integers(-1, 2, size=(32, 32, 3))
        noisy = np.clip(render(scene).astype(np.int64) + noise, 0, 255).astype(np.uint8)
        assert parse_image(noisy) == scene


def test_unparseable_image_is_reported():
    gray = np.full((32, 32, 3), 128, dtype=np.uint8)
    with pytest.raises(MorphError) as err:
        parse_image(gray)
    assert err.value.code == "UNPARSEABLE"
    assert try_parse_image(gray) is None


def test_empty_scene_caption():
    assert caption(Scene()) == "nothing"
    assert parse_caption("nothing") == Scene()


def test_bad_caption_and_unknown_word():
    with pytest.raises(MorphError) as err:
        parse_caption("a purple circle at top left")
    assert err.value.code == "UNPARSEABLE"
    with pytest.raises(MorphError) as err:
        encode_text("a purple circle")
    assert err.value.code == "UNKNOWN_WORD"


def test_encode_decode_text_stops_at_end_of_text():
    text = "a red circle at top left"
    ids = encode_text(text)
    assert decode_text(ids + encode_text("a blue square")) == text


def test_scene_validation():
    with pytest.raises(MorphError) as err:
        Scene.of(("circle", "red", (0, 0)), ("square", "blue", (0, 0)))
    assert err.value.code == "INVALID_SCENE"
    with pytest.raises(MorphError):
        Scene.of(("hexagon", "red", (0, 0)))


def test_scene_objects_are_canonically_ordered():
    a = Scene.of(("circle", "red", (3, 3)), ("square", "blue", (0, 1)))
    b = Scene.of(("square", "blue", (0, 1)), ("circle", "red", (3, 3)))
    assert a == b
    assert caption(a).startswith("a blue square")


def test_edits_are_one_primitive_and_recoverable_from_the_instruction(rng):
    for seed in range(200):
        scene = random_scene(rng)
        pair = make_edit(scene, seed)
        assert pair.target != pair.source
        assert apply_instruction(pair.source, pair.instruction) == pair.target


def test_identity_instruction_keeps_the_scene(rng):
    scene = random_scene(rng)
    assert apply_instruction(scene, IDENTITY_INSTRUCTION) == scene


def test_make_edit_is_seeded(rng):
    scene = random_scene(rng)
    assert make_edit(scene, 7) == make_edit(scene, 7)


def test_gen_dataset_is_deterministic_and_split_disjoint():
    first = gen_dataset(30, seed=3, split="train")
    again = gen_dataset(30, seed=3, split="train")
    assert [s.caption for s in first.samples] == [s.caption for s in again.samples]
    assert all(np.array_equal(a.image, b.image) for a, b in zip(first.samples, again.samples))

    test = gen_dataset(20, seed=3, split="test")
    train_keys = {s.key() for s in first.scenes()}
    test_keys = {s.key() for s in test.scenes()}
    assert len(train_keys) == 30 and len(test_keys) == 20
    assert not train_keys & test_keys
    assert all(split_of(s) == "test" for s in test.scenes())


def test_unknown_split():
    with pytest.raises(MorphError) as err:
        gen_dataset(1, seed=0, split="holdout")
    assert err.value.code == "UNKNOWN_SPLIT"


def test_write_then_load_dataset(tmp_path):
    dataset = gen_dataset(5, seed=1, split="val")
    path = write_dataset(dataset, tmp_path)
    assert path.name == "val.jsonl"
    loaded = load_dataset(path)
    assert len(loaded) == 5
    for a, b in zip(dataset.samples, loaded.samples):
        assert a.scene == b.scene and a.caption == b.caption
        assert np.array_equal(a.image, b.image)
        assert a.edit == b.edit
        assert np.array_equal(a.target_image, b.target_image)
