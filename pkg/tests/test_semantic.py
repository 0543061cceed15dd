import numpy as np
import pytest

from tdrg import numeric as nm
from tdrg.errors import ConfigError, DimensionError
from tdrg.numeric import ParameterStore, Tensor
from tdrg.semantic import (SemanticBranch, build_semantic_graph, class_activation_maps,
                           constraint_logits, gcn_update, joint_correlation, load_static_correlation,
                           save_static_correlation, semantic_vectors, structure_vectors)
from tdrg.structural import StructuralGraph


def double_loop_semantic_vectors(m, x, w, b):
    n_cls, h, wd = m.shape
    c_g = w.shape[1]
    out = np.zeros((n_cls, c_g))
    for c in range(n_cls):
        for i in range(h):
            for j in range(wd):
                out[c] += m[c, i, j] * (x[:, i, j] @ w + b)
    return out


def explicit_gcn(v, a, w, slope):
    n, d = v.shape
    av = np.zeros_like(v)
    for i in range(n):
        for j in range(n):
            av[i] += a[i, j] * v[j]
    z = np.zeros((n, w.shape[1]))
    for i in range(n):
        for k in range(w.shape[1]):
            z[i, k] = sum(av[i, t] * w[t, k] for t in range(d))
    return np.where(z >= 0, z, slope * z) + v


class TestClassMaps:
    def test_zero(self, rng):
        x = Tensor(rng.random((5, 3, 3)))
        m = class_activation_maps(x, Tensor(np.zeros((4, 5, 1, 1))), Tensor(np.zeros(4)))
        assert m.shape == (4, 3, 3) and np.all(m.data == 0)

    def test_selector(self, rng):
        x = rng.random((5, 3, 3))
        w = np.zeros((4, 5, 1, 1))
        for c, src in enumerate([2, 0, 4, 1]):
            w[c, src] = 1.0
        m = class_activation_maps(Tensor(x), Tensor(w)).data
        np.testing.assert_array_equal(m, x[[2, 0, 4, 1]])


class TestSemanticVectors:
    def test_one_hot_maps_select_positions(self, rng):
        x = rng.random((5, 3, 3))
        w, b = rng.random((5, 4)), rng.random(4)
        m = np.zeros((3, 3, 3))
        pos = [(0, 0), (1, 2), (2, 1)]
        for c, (i, j) in enumerate(pos):
            m[c, i, j] = 1.0
        v = semantic_vectors(Tensor(m), Tensor(x), Tensor(w), Tensor(b)).data
        for c, (i, j) in enumerate(pos):
            np.testing.assert_allclose(v[c], x[:, i, j] @ w + b, atol=1e-14)

    def test_zero_maps(self, rng):
        v = semantic_vectors(Tensor(np.zeros((3, 2, 2))), Tensor(rng.random((5, 2, 2))),
                             Tensor(rng.random((5, 4))), Tensor(rng.random(4)))
        assert np.all(v.data == 0)

    @pytest.mark.parametrize("trial", range(100))
    def test_double_loop_oracle(self, trial):
        rng = np.random.default_rng(trial)
        m, x = rng.standard_normal((3, 2, 2)), rng.standard_normal((5, 2, 2))
        w, b = rng.standard_normal((5, 4)), rng.standard_normal(4)
        got = semantic_vectors(Tensor(m), Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(got, double_loop_semantic_vectors(m, x, w, b), rtol=0, atol=1e-9)

    def test_bilinear_without_bias(self, rng):
        m, x, w = rng.random((3, 2, 2)), rng.random((5, 2, 2)), rng.random((5, 4))
        base = semantic_vectors(Tensor(m), Tensor(x), Tensor(w)).data
        np.testing.assert_allclose(semantic_vectors(Tensor(2.5 * m), Tensor(x), Tensor(w)).data, 2.5 * base, atol=1e-12)
        np.testing.assert_allclose(semantic_vectors(Tensor(m), Tensor(-3 * x), Tensor(w)).data, -3 * base, atol=1e-12)

    def test_spatial_mismatch(self, rng):
        with pytest.raises(DimensionError):
            semantic_vectors(Tensor(np.ones((3, 2, 2))), Tensor(np.ones((5, 3, 2))), Tensor(np.ones((5, 4))))


class TestConstraintLogits:
    def test_k1_is_max(self, rng):
        m = rng.random((4, 3, 3))
        np.testing.assert_array_equal(constraint_logits(Tensor(m), 0.1).data, m.reshape(4, -1).max(1))

    def test_constant(self):
        np.testing.assert_array_equal(constraint_logits(Tensor(np.full((2, 4, 4), 0.3)), 0.5).data, [0.3, 0.3])

    def test_clamp_rule(self, rng):
        # floor(0.05 * 16) = 0 -> k = 1
        m = rng.random((3, 4, 4))
        np.testing.assert_array_equal(constraint_logits(Tensor(m), 0.05).data, m.reshape(3, -1).max(1))

    @pytest.mark.parametrize("trial", range(20))
    def test_monotone(self, trial):
        rng = np.random.default_rng(trial)
        m = rng.standard_normal((3, 4, 4))
        before = constraint_logits(Tensor(m), 0.25).data
        c, i, j = rng.integers(3), rng.integers(4), rng.integers(4)
        m[c, i, j] += abs(rng.standard_normal()) + 0.01
        after = constraint_logits(Tensor(m), 0.25).data
        assert after[c] >= before[c]

    def test_unknown_pool(self):
        with pytest.raises(ConfigError):
            constraint_logits(Tensor(np.ones((1, 2, 2))), 0.5, "median")


class TestStructureVectors:
    def test_identical_rows(self):
        r = np.array([0.5, -1.0, 2.0])
        v = structure_vectors(Tensor(np.tile(r, (6, 1))), 4).data
        np.testing.assert_array_equal(v, np.tile(r, (4, 1)))

    def test_mean(self):
        t = StructuralGraph(Tensor(np.array([[0.0, 2.0], [2.0, 0.0]])), [], [])
        np.testing.assert_array_equal(structure_vectors(t, 3).data, np.ones((3, 2)))

    def test_rows_replicated(self, rng):
        v = structure_vectors(Tensor(rng.random((7, 5))), 6).data
        assert np.all(v == v[0])


class TestJointCorrelation:
    def test_zero_phi_c(self, rng):
        a = joint_correlation(Tensor(rng.random((5, 3))), Tensor(rng.random((5, 4))),
                              Tensor(np.zeros((8, 5))), Tensor(np.zeros(5)),
                              Tensor(rng.random((3, 4))), Tensor(rng.random(4)))
        np.testing.assert_array_equal(a.data, np.full((5, 5), 0.5))

    def test_shape_and_range(self, rng):
        a = joint_correlation(Tensor(rng.standard_normal((5, 3))), Tensor(rng.standard_normal((5, 4))),
                              Tensor(rng.standard_normal((8, 5))), Tensor(rng.standard_normal(5)),
                              Tensor(rng.standard_normal((3, 4))), None).data
        assert a.shape == (5, 5) and np.all((a > 0) & (a < 1))

    def test_row_permutation(self, rng):
        vt, vg = rng.standard_normal((5, 3)), rng.standard_normal((5, 4))
        wc, wt = rng.standard_normal((8, 5)), rng.standard_normal((3, 4))
        perm = rng.permutation(5)
        a = joint_correlation(Tensor(vt), Tensor(vg), Tensor(wc), None, Tensor(wt)).data
        ap = joint_correlation(Tensor(vt[perm]), Tensor(vg[perm]), Tensor(wc), None, Tensor(wt)).data
        np.testing.assert_allclose(ap, a[perm], atol=1e-14)


class TestGCN:
    def test_zero_weights(self, rng):
        v = rng.standard_normal((4, 6))
        np.testing.assert_array_equal(gcn_update(Tensor(v), Tensor(rng.random((4, 4))), Tensor(np.zeros((6, 6)))).data, v)

    def test_zero_adjacency(self, rng):
        v = rng.standard_normal((4, 6))
        np.testing.assert_array_equal(gcn_update(Tensor(v), Tensor(np.zeros((4, 4))), Tensor(rng.random((6, 6)))).data, v)

    @pytest.mark.parametrize("trial", range(100))
    def test_explicit_oracle(self, trial):
        rng = np.random.default_rng(trial)
        v, a, w = rng.standard_normal((4, 6)), rng.random((4, 4)), rng.standard_normal((6, 6))
        np.testing.assert_allclose(gcn_update(Tensor(v), Tensor(a), Tensor(w), 0.2).data,
                                   explicit_gcn(v, a, w, 0.2), rtol=0, atol=1e-9)


def _branch(cfg, static=None):
    params = ParameterStore()
    return SemanticBranch(cfg, params, nm.make_rng(0), 16, 16, np.float64, static), params


def _graph(rng, n=21, c=16):
    return StructuralGraph(Tensor(rng.standard_normal((n, c))), [], [])


class TestBuild:
    def test_default_shapes(self, toy_cfg, rng):
        branch, _ = _branch(toy_cfg)
        g = build_semantic_graph(Tensor(rng.random((16, 2, 2))), _graph(rng), branch)
        assert g.nodes.shape == (8, 32)
        assert g.correlation.shape == (8, 8)
        assert g.class_maps.shape == (8, 2, 2)
        assert g.constraint_logits.shape == (8,)
        assert np.all((g.correlation.data > 0) & (g.correlation.data < 1))

    def test_no_structural_guidance(self, toy_cfg, rng):
        branch, params = _branch(toy_cfg.replace({"semantic.structural_guidance": False}))
        g = build_semantic_graph(Tensor(rng.random((16, 2, 2))), _graph(rng), branch)
        assert g.nodes.shape == (8, 16)
        assert "semantic.phi_t.w" not in params

    def test_static_correlation_from_file(self, toy_cfg, rng, tmp_path):
        a = rng.random((8, 8))
        path = tmp_path / "static.txt"
        save_static_correlation(path, a)
        branch, params = _branch(toy_cfg.replace({"semantic.correlation": "static", "semantic.static_path": str(path)}))
        assert "semantic.phi_c.w" not in params
        g = build_semantic_graph(Tensor(rng.random((16, 2, 2))), _graph(rng), branch)
        np.testing.assert_allclose(g.correlation.data, a, atol=1e-8)

    def test_static_file_shape_checked(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 0\n0 1\n")
        with pytest.raises(ConfigError):
            load_static_correlation(path, 3)

    def test_static_without_path(self, toy_cfg):
        with pytest.raises(ConfigError):
            _branch(toy_cfg.replace({"semantic.correlation": "static"}))

    def test_no_constraint(self, toy_cfg, rng):
        branch, _ = _branch(toy_cfg.replace({"semantic.constraint_pool": "none"}))
        assert build_semantic_graph(Tensor(rng.random((16, 2, 2))), _graph(rng), branch).constraint_logits is None

    def test_input_dependent_correlation(self, toy_cfg):
        branch, _ = _branch(toy_cfg)
        for trial in range(5):
            rng = np.random.default_rng(trial)
            a = build_semantic_graph(Tensor(rng.random((16, 2, 2))), _graph(rng), branch).correlation.data
            b = build_semantic_graph(Tensor(rng.random((16, 2, 2))), _graph(rng), branch).correlation.data
            assert np.abs(a - b).max() > 0

    def test_gcn_zero_weight_residual(self, toy_cfg, rng):
        branch, params = _branch(toy_cfg)
        params["semantic.gcn.w"].data[:] = 0
        x, t = Tensor(rng.random((16, 2, 2))), _graph(rng)
        g = build_semantic_graph(x, t, branch)
        m = class_activation_maps(x, params["semantic.cam.w"], params["semantic.cam.b"])
        v_g = semantic_vectors(m, x, params["semantic.phi_g.w"], params["semantic.phi_g.b"]).data
        v = np.concatenate([v_g, structure_vectors(t, 8).data], axis=1)
        np.testing.assert_array_equal(g.nodes.data, v)

    def test_gradcheck_semantic_branch(self, toy_cfg):
        rng = np.random.default_rng(11)
        branch, params = _branch(toy_cfg)
        x = params.add("x", rng.standard_normal((16, 2, 2)))
        t_nodes = params.add("t", rng.standard_normal((21, 16)))
        proj = rng.standard_normal((8, 32))

        def loss():
            g = build_semantic_graph(x, StructuralGraph(t_nodes, [], []), branch)
            return nm.sum_(g.nodes * proj) + nm.sum_(g.constraint_logits)

        res = nm.gradcheck(loss, params)
        assert all(r.ok for r in res), [r for r in res if not r.ok]
