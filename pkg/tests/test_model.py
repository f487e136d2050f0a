import numpy as np
import pytest

from conftest import make_toy_skeleton, random_grid, random_model
from oracles import best_pose_brute, pose_score_direct
from rgbdpose.errors import DataError
from rgbdpose.model import (
    MODEL_MAGIC,
    best_score,
    compute_score_maps,
    deformation_feature,
    infer_from_features,
    load_model,
    local_score,
    pass_message,
    save_model,
    score_configuration,
    score_part_appearance,
    zero_model,
)
from rgbdpose.skeleton import SkeletonDef, register_skeleton


class TestDeformationFeature:
    def test_identical_points(self):
        np.testing.assert_array_equal(deformation_feature((5, 3), (5, 3)),
                                      [0, 0, 0, 0])

    def test_formula(self):
        np.testing.assert_array_equal(deformation_feature((5, 3), (2, 7)),
                                      [3, 9, -4, 16])
        np.testing.assert_array_equal(deformation_feature((0, 0), (1, 1)),
                                      [-1, 1, -1, 1])

    def test_squares_nonnegative(self, rng):
        for _ in range(50):
            xi, xj = rng.normal(0, 10, 2), rng.normal(0, 10, 2)
            psi = deformation_feature(tuple(xi), tuple(xj))
            assert psi[1] >= 0 and psi[3] >= 0
            assert psi[1] == pytest.approx(psi[0] ** 2)
            assert psi[3] == pytest.approx(psi[2] ** 2)


class TestAppearance:
    def test_zero_filter_gives_bias(self, rng):
        sk = make_toy_skeleton(2, rng)
        m = zero_model(sk, 1, (1, 1), 3, cell_size=4, bin_count=1)
        m.bias_m[0][0] = 2.5
        m.bias_d[0][0] = 2.5
        fm, fd = random_grid(rng, 4, 5, 3), random_grid(rng, 4, 5, 3)
        gm, gd = score_part_appearance(m, 0, 0, fm, fd)
        np.testing.assert_allclose(gm, 2.5)
        np.testing.assert_allclose(gd, 2.5)

    def test_1x1_filter_is_per_cell_dot(self, rng):
        sk = make_toy_skeleton(2, rng)
        m = random_model(sk, 1, 1, 3, rng)
        fm, fd = random_grid(rng, 2, 2, 3), random_grid(rng, 2, 2, 3)
        gm, gd = score_part_appearance(m, 1, 0, fm, fd)
        for y in range(2):
            for x in range(2):
                expect = float(m.filters_m[1][0, 0, 0] @ fm.cells[y, x]) + m.bias_m[1][0]
                assert gm[y, x] == pytest.approx(expect, abs=1e-12)

    def test_channel_symmetry(self, rng):
        """Swapping channel weights and channel grids leaves scores unchanged."""
        sk = make_toy_skeleton(3, rng)
        m = random_model(sk, 2, 3, 4, rng)
        fm, fd = random_grid(rng, 6, 6, 4), random_grid(rng, 6, 6, 4)
        swapped = random_model(sk, 2, 3, 4, rng)
        swapped.filters_m, swapped.filters_d = m.filters_d, m.filters_m
        swapped.bias_m, swapped.bias_d = m.bias_d, m.bias_m
        swapped.def_w_m, swapped.def_w_d = m.def_w_d, m.def_w_m
        swapped.edge_bias_m, swapped.edge_bias_d = m.edge_bias_d, m.edge_bias_m
        s1, c1, t1 = best_score(m, fm, fd)
        s2, c2, t2 = best_score(swapped, fd, fm)
        assert s1 == pytest.approx(s2, abs=1e-9)
        np.testing.assert_array_equal(c1, c2)

    def test_filter_larger_than_grid_rejected(self, rng):
        sk = make_toy_skeleton(2, rng)
        m = random_model(sk, 1, 5, 3, rng)
        fm, fd = random_grid(rng, 4, 4, 3), random_grid(rng, 4, 4, 3)
        with pytest.raises(DataError, match="footprint"):
            score_part_appearance(m, 0, 0, fm, fd)


class TestLocalScore:
    def test_leaf_is_appearance_only(self, rng):
        sk = make_toy_skeleton(3, rng)
        m = random_model(sk, 2, 1, 3, rng)
        fm, fd = random_grid(rng, 5, 5, 3), random_grid(rng, 5, 5, 3)
        leaf = next(p for p in range(3) if not sk.children(p))
        gm, gd = score_part_appearance(m, leaf, 1, fm, fd)
        np.testing.assert_allclose(local_score(m, leaf, 1, fm, fd, {}), gm + gd)

    def test_constant_child_message_adds(self, rng):
        sk = register_skeleton(SkeletonDef(kind="chain2t", names=("a", "b"),
                                           edges=((0, 1),)))
        m = random_model(sk, 1, 1, 3, rng)
        fm, fd = random_grid(rng, 4, 4, 3), random_grid(rng, 4, 4, 3)
        base = local_score(m, 0, 0, fm, fd, {1: np.zeros((4, 4))})
        bumped = local_score(m, 0, 0, fm, fd, {1: np.full((4, 4), 3.25)})
        np.testing.assert_allclose(bumped, base + 3.25)

    def test_missing_child_message_rejected(self, rng):
        sk = register_skeleton(SkeletonDef(kind="chain2m", names=("a", "b"),
                                           edges=((0, 1),)))
        m = random_model(sk, 1, 1, 3, rng)
        fm, fd = random_grid(rng, 4, 4, 3), random_grid(rng, 4, 4, 3)
        with pytest.raises(ValueError, match="missing messages"):
            local_score(m, 0, 0, fm, fd, {})

    def test_three_part_chain_matches_hand_expansion(self, rng):
        """Root local score equals the direct expansion of appearance sums
        plus spring-maximized child contributions."""
        names = ("a", "b", "c")
        sk = register_skeleton(SkeletonDef(kind="chain3x", names=names,
                                           edges=((0, 1), (1, 2))))
        m = random_model(sk, 1, 1, 2, rng)
        fm, fd = random_grid(rng, 4, 4, 2), random_grid(rng, 4, 4, 2)
        maps = compute_score_maps(m, fm, fd)
        app = {p: sum(score_part_appearance(m, p, 0, fm, fd)) for p in range(3)}

        def spring(edge, child_grid):
            wsum = m.def_w_m[edge][0, 0] + m.def_w_d[edge][0, 0]
            bias = m.edge_bias_m[edge][0, 0] + m.edge_bias_d[edge][0, 0]
            h, w = child_grid.shape
            out = np.full((h, w), -np.inf)
            for py in range(h):
                for px in range(w):
                    for cy in range(h):
                        for cx in range(w):
                            dx, dy = cx - px, cy - py
                            v = (child_grid[cy, cx] + wsum[0] * dx + wsum[1] * dx * dx
                                 + wsum[2] * dy + wsum[3] * dy * dy + bias)
                            out[py, px] = max(out[py, px], v)
            return out

        expect_b = app[1] + spring((1, 2), app[2])
        expect_a = app[0] + spring((0, 1), expect_b)
        np.testing.assert_allclose(maps.part_scores[0][0], expect_a, atol=1e-9)


class TestPassMessage:
    def test_zero_springs_constant_message(self, rng):
        sk = register_skeleton(SkeletonDef(kind="chain2z", names=("a", "b"),
                                           edges=((0, 1),)))
        m = random_model(sk, 2, 1, 3, rng, concave=False)
        for e in sk.edges:
            m.def_w_m[e][:] = 0.0
            m.def_w_d[e][:] = 0.0
        child_scores = rng.normal(0, 2, (2, 5, 5))
        msg, bt = pass_message(m, (0, 1), 0, child_scores)
        peak = max(child_scores[t].max()
                   + m.edge_bias_m[(0, 1)][t, 0] + m.edge_bias_d[(0, 1)][t, 0]
                   for t in range(2))
        np.testing.assert_allclose(msg, peak)

    def test_point_mass_quadratic_message(self, rng):
        sk = register_skeleton(SkeletonDef(kind="chain2q", names=("a", "b"),
                                           edges=((0, 1),)))
        m = zero_model(sk, 1, (1, 1), 3, cell_size=4, bin_count=1)
        m.def_w_m[(0, 1)][0, 0] = [0.0, -0.5, 0.0, -0.5]
        m.def_w_d[(0, 1)][0, 0] = [0.0, -0.5, 0.0, -0.5]
        child = np.full((1, 7, 7), -np.inf)
        child[0, 2, 4] = 10.0
        msg, bt = pass_message(m, (0, 1), 0, child)
        yy, xx = np.mgrid[0:7, 0:7]
        np.testing.assert_allclose(msg, 10.0 - (yy - 2) ** 2 - (xx - 4) ** 2)
        assert (bt["y"] == 2).all() and (bt["x"] == 4).all()

    def test_matches_exhaustive_double_max(self, rng):
        """Any 2-type instance equals the brute-force double maximization."""
        sk = register_skeleton(SkeletonDef(kind="chain2e", names=("a", "b"),
                                           edges=((0, 1),)))
        m = random_model(sk, (2, 2), 1, 3, rng)
        child_scores = rng.normal(0, 2, (2, 6, 6))
        for tp in range(2):
            msg, bt = pass_message(m, (0, 1), tp, child_scores)
            expect = np.full((6, 6), -np.inf)
            for py in range(6):
                for px in range(6):
                    for tc in range(2):
                        w = m.spring_weights((0, 1), tc, tp)
                        bias = (m.edge_bias_m[(0, 1)][tc, tp]
                                + m.edge_bias_d[(0, 1)][tc, tp])
                        for cy in range(6):
                            for cx in range(6):
                                dx, dy = cx - px, cy - py
                                v = (child_scores[tc, cy, cx] + bias
                                     + w[0] * dx + w[1] * dx * dx
                                     + w[2] * dy + w[3] * dy * dy)
                                expect[py, px] = max(expect[py, px], v)
            np.testing.assert_allclose(msg, expect, atol=1e-9)

    def test_envelope_engine_rejects_convex_springs(self, rng):
        sk = register_skeleton(SkeletonDef(kind="chain2c", names=("a", "b"),
                                           edges=((0, 1),)))
        m = random_model(sk, 1, 1, 3, rng)
        m.def_w_m[(0, 1)][0, 0, 1] = 0.5  # convex dx^2 once channels sum
        m.def_w_d[(0, 1)][0, 0, 1] = 0.5
        with pytest.raises(ValueError, match="concave"):
            pass_message(m, (0, 1), 0, rng.normal(0, 1, (1, 4, 4)),
                         engine="envelope")

    def test_message_monotone_in_child_scores(self, rng):
        sk = register_skeleton(SkeletonDef(kind="chain2mn", names=("a", "b"),
                                           edges=((0, 1),)))
        m = random_model(sk, 2, 1, 3, rng)
        child = rng.normal(0, 2, (2, 6, 6))
        lo, _ = pass_message(m, (0, 1), 0, child)
        hi, _ = pass_message(m, (0, 1), 0, child + rng.uniform(0, 1, (2, 6, 6)))
        assert (hi >= lo - 1e-12).all()


class TestInference:
    def test_single_part_is_appearance_argmax(self, rng):
        sk = make_toy_skeleton(1, rng)
        m = random_model(sk, (2,), 1, 3, rng)
        fm, fd = random_grid(rng, 6, 6, 3), random_grid(rng, 6, 6, 3)
        score, cells, types = best_score(m, fm, fd)
        app = np.stack([sum(score_part_appearance(m, 0, t, fm, fd))
                        for t in range(2)])
        assert score == pytest.approx(app.max(), abs=1e-12)

    @pytest.mark.parametrize("trial", range(8))
    def test_matches_brute_force(self, trial):
        rng = np.random.default_rng(100 + trial)
        sk = make_toy_skeleton(int(rng.integers(2, 4)), rng)
        m = random_model(sk, int(rng.integers(1, 3)), 1, 2, rng)
        fm, fd = random_grid(rng, 3, 3, 2), random_grid(rng, 3, 3, 2)
        s_dp, cells, types = best_score(m, fm, fd)
        s_bf, cells_bf, types_bf = best_pose_brute(m, fm, fd)
        assert abs(s_dp - s_bf) <= 1e-9
        np.testing.assert_array_equal(cells, cells_bf)
        np.testing.assert_array_equal(types, types_bf)

    def test_total_score_self_consistency(self, rng):
        sk = make_toy_skeleton(4, rng)
        m = random_model(sk, 2, 3, 3, rng)
        fm, fd = random_grid(rng, 8, 8, 3), random_grid(rng, 8, 8, 3)
        score, cells, types = best_score(m, fm, fd)
        assert score == pytest.approx(score_configuration(m, fm, fd, cells, types),
                                      abs=1e-6)
        assert score == pytest.approx(pose_score_direct(m, fm, fd, cells, types),
                                      abs=1e-6)

    def test_root_bias_shift(self, rng):
        """Shifting the root bias shifts every score by the same constant and
        keeps the argmax configuration."""
        sk = make_toy_skeleton(3, rng)
        m = random_model(sk, 2, 1, 3, rng)
        fm, fd = random_grid(rng, 6, 6, 3), random_grid(rng, 6, 6, 3)
        s1, c1, t1 = best_score(m, fm, fd)
        poses1 = infer_from_features(m, fm, fd, top_k=3, threshold=None)
        m.bias_m[sk.root] = m.bias_m[sk.root] + 1.75
        s2, c2, t2 = best_score(m, fm, fd)
        poses2 = infer_from_features(m, fm, fd, top_k=3, threshold=None)
        assert s2 == pytest.approx(s1 + 1.75, abs=1e-9)
        np.testing.assert_array_equal(c1, c2)
        np.testing.assert_array_equal(t1, t2)
        for p1, p2 in zip(poses1, poses2):
            assert p2.total_score == pytest.approx(p1.total_score + 1.75, abs=1e-9)
            np.testing.assert_array_equal(p1.positions(), p2.positions())
            assert [j.type_id for j in p1.joints] == [j.type_id for j in p2.joints]

    def test_ranked_descending_and_nms(self, rng):
        sk = make_toy_skeleton(3, rng)
        m = random_model(sk, 2, 1, 3, rng)
        fm, fd = random_grid(rng, 10, 10, 3), random_grid(rng, 10, 10, 3)
        poses = infer_from_features(m, fm, fd, top_k=5, threshold=None)
        scores = [p.total_score for p in poses]
        assert scores == sorted(scores, reverse=True)
        assert len(poses) >= 1

    def test_grid_too_small_rejected(self, rng):
        sk = make_toy_skeleton(2, rng)
        m = random_model(sk, 1, 5, 3, rng)
        fm, fd = random_grid(rng, 3, 3, 3), random_grid(rng, 3, 3, 3)
        with pytest.raises(DataError):
            infer_from_features(m, fm, fd)


class TestPersistence:
    def test_roundtrip(self, rng, tmp_path):
        from rgbdpose.skeleton import REDUCED10
        m = random_model(REDUCED10, 2, 3, 5, rng)
        path = tmp_path / "model.4ddpm"
        save_model(m, path)
        again = load_model(path)
        assert again.type_counts == m.type_counts
        for p in range(m.part_count):
            np.testing.assert_allclose(again.filters_m[p],
                                       m.filters_m[p].astype(np.float32), atol=0)
        for e in m.skeleton.edges:
            np.testing.assert_allclose(again.def_w_d[e],
                                       m.def_w_d[e].astype(np.float32), atol=0)

    def test_magic_and_version_checked(self, rng, tmp_path):
        from rgbdpose.skeleton import REDUCED10
        m = random_model(REDUCED10, 1, 1, 2, rng)
        path = tmp_path / "model.4ddpm"
        save_model(m, path)
        raw = bytearray(path.read_bytes())
        assert raw[:5] == MODEL_MAGIC

        bad_version = bytearray(raw)
        bad_version[5] = 99
        (tmp_path / "bad_version").write_bytes(bad_version)
        with pytest.raises(DataError, match="version"):
            load_model(tmp_path / "bad_version")

        bad_magic = bytearray(raw)
        bad_magic[0] = ord("X")
        (tmp_path / "bad_magic").write_bytes(bad_magic)
        with pytest.raises(DataError, match="magic"):
            load_model(tmp_path / "bad_magic")
