"""CSP batch format: splitting, offsets, neighbor links, reassembly."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixserve.csp import (
    DIRECTIONS,
    OPPOSITE,
    STANDARD_CLASSES,
    choose_patch_size,
    reassemble,
    split,
)
from mixserve.errors import InputError

N, NE, E, SE, S, SW, W, NW = range(8)


def _latents(rng, dims, channels=2):
    return [(f"r{i}", rng.normal(size=(channels, d, d))) for i, d in enumerate(dims)]


def test_standard_classes_latent_dims():
    assert [STANDARD_CLASSES[k].latent for k in ("low", "med", "high")] == [64, 96, 128]


def test_choose_patch_size_gcd():
    assert choose_patch_size([64, 96, 128]) == 32
    assert choose_patch_size([64]) == 64
    assert choose_patch_size([96, 128]) == 32
    with pytest.raises(InputError):
        choose_patch_size([])
    with pytest.raises(InputError):
        choose_patch_size([64, 0])


def test_request_offset_example():
    # two 64-latents (4 patches each at ps=32) and one 96 (9 patches)
    rng = np.random.default_rng(0)
    batch = split(_latents(rng, [64, 64, 96]))
    assert batch.patch_size == 32
    assert batch.request_offset.tolist() == [0, 4, 8, 17]
    assert batch.resolution_dims == [64, 96]
    assert batch.resolution_offset.tolist() == [0, 8, 17]


def test_sort_is_resolution_major_then_arrival():
    rng = np.random.default_rng(1)
    batch = split(_latents(rng, [96, 64, 96, 64]))
    assert [e.request_id for e in batch.requests] == ["r1", "r3", "r0", "r2"]
    assert [e.latent for e in batch.requests] == [64, 64, 96, 96]
    # ordinals are row-major and restart per request
    for e in batch.requests:
        sl = batch.patches_of_request(e.request_id)
        assert batch.ordinal[sl].tolist() == list(range(e.patch_count))


def test_group_by_resolution_slices_cover_everything():
    rng = np.random.default_rng(2)
    batch = split(_latents(rng, [64, 128, 96, 64]))
    groups = batch.group_by_resolution()
    assert [d for d, _ in groups] == [64, 96, 128]
    covered = sum(sl.stop - sl.start for _, sl in groups)
    assert covered == batch.n_patches
    for dim, sl in groups:
        for p in range(sl.start, sl.stop):
            assert batch.requests[batch.request_index[p]].latent == dim


def test_neighbor_counts_on_3x3_grid():
    rng = np.random.default_rng(3)
    batch = split(_latents(rng, [96]), patch_size=32)  # 3x3 patches
    deg = (batch.neighbors >= 0).sum(axis=1)
    # corners 3, edges 5, center 8
    assert sorted(deg.tolist()) == [3, 3, 3, 3, 5, 5, 5, 5, 8]
    center = 4
    assert deg[center] == 8
    assert batch.neighbors[center, N] == 1
    assert batch.neighbors[center, SE] == 8
    assert batch.neighbors[0, N] == -1
    assert batch.neighbors[0, E] == 1
    assert batch.neighbors[0, S] == 3
    assert batch.neighbors[0, SE] == 4


def test_single_patch_image_has_no_neighbors():
    rng = np.random.default_rng(4)
    batch = split(_latents(rng, [64, 96]), patch_size=None)
    # ps = 32: the 64-latent is 2x2, the 96 is 3x3; now force one-patch images
    batch1 = split([("a", rng.normal(size=(1, 64, 64)))])
    assert batch1.patch_size == 64
    assert batch1.n_patches == 1
    assert (batch1.neighbors == -1).all()
    assert batch.n_patches == 13


def test_neighbors_stay_within_image():
    rng = np.random.default_rng(5)
    batch = split(_latents(rng, [64, 64, 96]))
    for p in range(batch.n_patches):
        for q in batch.neighbors[p]:
            if q >= 0:
                assert batch.request_index[q] == batch.request_index[p]


def test_patch_pixels_are_pure_copies():
    rng = np.random.default_rng(6)
    lat = rng.normal(size=(3, 64, 64))
    batch = split([("a", lat)], patch_size=32)
    sl = batch.patches_of_request("a")
    p0 = sl.start
    np.testing.assert_array_equal(batch.data[p0], lat[:, :32, :32])
    np.testing.assert_array_equal(batch.data[p0 + 1], lat[:, :32, 32:])
    np.testing.assert_array_equal(batch.data[p0 + 3], lat[:, 32:, 32:])


def test_input_validation():
    rng = np.random.default_rng(7)
    with pytest.raises(InputError):
        split([])
    with pytest.raises(InputError):
        split([("a", rng.normal(size=(2, 64, 64))), ("a", rng.normal(size=(2, 64, 64)))])
    with pytest.raises(InputError):
        split([("a", rng.normal(size=(2, 64, 48)))])
    with pytest.raises(InputError):
        split([("a", rng.normal(size=(2, 64, 64))), ("b", rng.normal(size=(3, 64, 64)))])
    with pytest.raises(InputError):
        split([("a", rng.normal(size=(2, 64, 64)))], patch_size=48)
    batch = split([("a", rng.normal(size=(2, 64, 64)))])
    with pytest.raises(InputError):
        batch.patches_of_request("nope")


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.sampled_from([4, 6, 8]), min_size=1, max_size=6),
    st.integers(0, 2 ** 31 - 1),
)
def test_split_reassemble_round_trip(dims, seed):
    rng = np.random.default_rng(seed)
    reqs = _latents(rng, dims, channels=2)
    batch = split(reqs)
    rebuilt = reassemble(batch)
    for rid, lat in reqs:
        np.testing.assert_array_equal(rebuilt[rid], lat)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.sampled_from([4, 6, 8]), min_size=1, max_size=5),
    st.integers(0, 2 ** 31 - 1),
)
def test_neighbor_links_are_symmetric(dims, seed):
    rng = np.random.default_rng(seed)
    batch = split(_latents(rng, dims, channels=1))
    for p in range(batch.n_patches):
        for d, name in enumerate(DIRECTIONS):
            q = batch.neighbors[p, d]
            if q >= 0:
                back = DIRECTIONS.index(OPPOSITE[name])
                assert batch.neighbors[q, back] == p


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.sampled_from([4, 6, 8]), min_size=1, max_size=5),
    st.integers(0, 2 ** 31 - 1),
)
def test_offsets_are_monotone_and_cover(dims, seed):
    rng = np.random.default_rng(seed)
    batch = split(_latents(rng, dims, channels=1))
    ro = batch.request_offset
    assert ro[0] == 0 and ro[-1] == batch.n_patches
    assert (np.diff(ro) > 0).all()
    so = batch.resolution_offset
    assert so[0] == 0 and so[-1] == batch.n_patches
    assert (np.diff(so) > 0).all()
    # resolution-major: latent dims are nondecreasing along the patch axis
    per_patch = [batch.requests[i].latent for i in batch.request_index]
    assert per_patch == sorted(per_patch)


def test_reassemble_with_override_data():
    rng = np.random.default_rng(8)
    batch = split(_latents(rng, [64, 96]))
    alt = rng.normal(size=batch.data.shape)
    rebuilt = reassemble(batch, alt)
    sl = batch.patches_of_request("r0")
    np.testing.assert_array_equal(rebuilt["r0"][:, :32, :32], alt[sl.start])
    with pytest.raises(InputError):
        reassemble(batch, alt[:-1])
