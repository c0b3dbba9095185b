import numpy as np
import pytest
from numpy.testing import assert_array_equal
from scipy import ndimage

from lab.errors import GenerationError, InvalidInputError
from lab.scenes import FEATURE_DIM, apply_scheme, extract_features, generate_scene, keeps_aux
from schemas.segbench import (AUX_IDS, BACKGROUND, HOST_ORGAN, LESION, MIMIC, LabeledImage, LabelScheme,
                              LesionPlacement, SceneConfig)


def test_generation_is_deterministic(small_scene):
    first, second = generate_scene(small_scene, 3), generate_scene(small_scene, 3)
    assert_array_equal(first.labels, second.labels)
    assert_array_equal(first.intensities, second.intensities)
    assert not np.array_equal(first.labels, generate_scene(small_scene, 4).labels)


def test_default_scenes_have_small_lesions():
    cfg = SceneConfig()
    scenes = [generate_scene(cfg, seed) for seed in range(100)]
    lesion = sum(int(np.sum(s.labels == LESION)) for s in scenes)
    total = sum(s.labels.size for s in scenes)
    assert lesion / total < 0.02
    assert all(LESION in s.present for s in scenes)


def test_inside_placement(small_scene):
    for seed in range(10):
        img = generate_scene(small_scene, seed)
        lesions, count = ndimage.label(img.labels == LESION)
        host = img.labels == HOST_ORGAN
        for i in range(1, count + 1):
            assert np.any(ndimage.binary_dilation(lesions == i) & host)
        # mimics keep a gap to every other structure
        mimic = img.labels == MIMIC
        assert not np.any(ndimage.binary_dilation(mimic) & (img.labels != MIMIC) & (img.labels != BACKGROUND))


def test_adjacent_placement(small_scene):
    cfg = small_scene.model_copy(update={"placement": LesionPlacement.adjacent_to_organ})
    for seed in range(10):
        img = generate_scene(cfg, seed)
        host = img.labels == HOST_ORGAN
        touch = ndimage.binary_dilation(host, iterations=2)
        lesions, count = ndimage.label(img.labels == LESION)
        assert count >= 1
        for i in range(1, count + 1):
            assert np.any((lesions == i) & touch)


def test_infeasible_layout_fails():
    cfg = SceneConfig(height=50, width=50, organ_count=(3, 3), organ_size=(20.0, 23.0), max_retries=20)
    with pytest.raises(GenerationError):
        generate_scene(cfg, 0)


def test_mimics_share_lesion_intensity():
    cfg = SceneConfig(texture=0.0, noise=0.0)
    img = generate_scene(cfg, 1)
    assert np.all(img.intensities[img.labels == MIMIC] == cfg.lesion_mean)
    assert np.all(img.intensities[img.labels == LESION] == cfg.lesion_mean)


def test_features(small_scene):
    img = generate_scene(small_scene, 2)
    x = extract_features(img)
    assert x.shape == (48 * 48, FEATURE_DIM)
    assert_array_equal(x[:, 0], img.intensities.ravel())
    assert x[:, 5].min() == 0.0 and x[:, 5].max() == 1.0
    assert np.all(x[:, 2] >= 0.0)


# LABEL SCHEMES #


@pytest.fixture(scope="module")
def full_scene() -> LabeledImage:
    cfg = SceneConfig()
    for seed in range(50):
        img = generate_scene(cfg, seed)
        if {BACKGROUND, LESION, *AUX_IDS} <= img.present:
            return img
    raise AssertionError("no scene contains every structure")


def test_binary_collapses_auxiliaries(full_scene):
    out = apply_scheme(full_scene, LabelScheme.from_name("binary"), 0)
    assert out.present == {0, 1}
    assert_array_equal(out.labels == 1, full_scene.labels == LESION)


def test_backsplit_keeps_auxiliaries(full_scene):
    out = apply_scheme(full_scene, LabelScheme.from_name("backsplit"), 0)
    assert out.present == {0, 1, 2, 3, 4}
    assert out.class_names == full_scene.class_names


@pytest.mark.parametrize("k", [1, 2, 3])
def test_aux_sweep_label_count(full_scene, k):
    out = apply_scheme(full_scene, LabelScheme.from_name(f"aux-{k}"), 0)
    assert len(out.present) == k + 2


def test_virtual_scheme_adds_channels_only(full_scene):
    scheme = LabelScheme.from_name("virtual-2")
    out = apply_scheme(full_scene, scheme, 0)
    assert out.present == {0, 1}
    assert scheme.class_count == 4
    assert out.class_names[-2:] == ("virtual-0", "virtual-1")


def test_partial_scheme_boundaries(full_scene):
    binary = apply_scheme(full_scene, LabelScheme.from_name("binary"), 5, 3)
    backsplit = apply_scheme(full_scene, LabelScheme.from_name("backsplit"), 5, 3)
    assert_array_equal(apply_scheme(full_scene, LabelScheme.from_name("partial-0"), 5, 3).labels, binary.labels)
    assert_array_equal(apply_scheme(full_scene, LabelScheme.from_name("partial-1"), 5, 3).labels, backsplit.labels)


def test_partial_fraction_is_respected():
    scheme = LabelScheme.from_name("partial-0.5")
    kept = sum(keeps_aux(scheme, 11, i) for i in range(2000))
    assert 900 < kept < 1100


def test_label_noise_moves_auxiliary_boundaries_only(full_scene):
    clean = apply_scheme(full_scene, LabelScheme.from_name("backsplit"), 0)
    noisy = apply_scheme(full_scene, LabelScheme.from_name("backsplit", label_noise=1.0), 0)
    assert not np.array_equal(clean.labels, noisy.labels)
    assert_array_equal(noisy.labels == 1, clean.labels == 1)


def test_unknown_auxiliary_ids(full_scene):
    with pytest.raises(InvalidInputError):
        apply_scheme(full_scene, LabelScheme.from_name("backsplit", aux_ids=(2, 7)), 0)


@pytest.mark.parametrize("name", ["unknown", "partial-2", "aux-4", "aux-x", "binary-1", "partial"])
def test_invalid_scheme_names(name):
    with pytest.raises(ValueError):
        LabelScheme.from_name(name)


def test_scheme_names_round_trip():
    for name in ["binary", "backsplit", "virtual", "virtual-3", "partial-0.25", "aux-2"]:
        assert LabelScheme.from_name(name).name == name
