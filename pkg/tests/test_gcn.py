import numpy as np
import pytest
import torch

from auxcount.models.gcn import GraphReasoning
from oracles import (
    dependency_loops,
    graph_convolve_loops,
    project_vertices_loops,
    reasoning_module_loops,
)


def make_module(channels=4, levels=5, vertices=3, grid=(4, 4), seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    module = GraphReasoning(
        channels=channels, level_classes=levels, num_vertices=vertices, grid_size=grid
    )
    return module.to(dtype).eval()


def make_inputs(channels=4, levels=5, grid=(4, 4), seed=0, dtype=torch.float64):
    rng = np.random.default_rng(seed)
    h, w = grid
    feat = torch.tensor(rng.normal(size=(1, channels, h, w)), dtype=dtype)
    crowd = torch.tensor(rng.uniform(0.01, 0.99, size=(1, 1, h, w)), dtype=dtype)
    logits = torch.tensor(rng.normal(size=(1, levels, h, w)), dtype=dtype)
    level = torch.softmax(logits, dim=1)
    return feat, crowd, level


class TestDependency:
    def test_single_pixel_is_one(self):
        module = make_module(grid=(1, 1))
        _, _, level = make_inputs(grid=(1, 1))
        dep = module.compute_dependency(level)
        torch.testing.assert_close(dep, torch.ones(1, 1, 1, dtype=torch.float64))

    def test_spatially_constant_input_gives_uniform_rows(self):
        module = make_module(grid=(3, 3))
        level = torch.full((1, 5, 3, 3), 0.2, dtype=torch.float64)
        dep = module.compute_dependency(level)
        torch.testing.assert_close(dep, torch.full((1, 9, 9), 1.0 / 9.0, dtype=torch.float64))

    def test_random_2x2_matches_loop_oracle(self):
        module = make_module(grid=(2, 2))
        _, _, level = make_inputs(grid=(2, 2), seed=3)
        dep = module.compute_dependency(level)[0].detach().numpy()
        q = module.affinity_query(level)[0].detach().numpy().reshape(5, 4)
        k = module.affinity_key(level)[0].detach().numpy().reshape(5, 4)
        expected = dependency_loops(q, k)
        np.testing.assert_allclose(dep, expected, atol=1e-10)

    def test_rows_sum_to_one(self):
        for seed in range(5):
            module = make_module(grid=(4, 4), seed=seed)
            _, _, level = make_inputs(grid=(4, 4), seed=seed)
            dep = module.compute_dependency(level)
            sums = dep.sum(dim=-1)
            torch.testing.assert_close(sums, torch.ones_like(sums), atol=1e-5, rtol=0)
            assert (dep > 0).all() and (dep < 1).all()


class TestProjection:
    def test_zero_mask_and_zero_bias_annihilate(self):
        module = make_module()
        feat, _, level = make_inputs()
        with torch.no_grad():
            module.to_vertices.bias.zero_()
        dep = module.compute_dependency(level)
        vertices = module.project_vertices(feat, torch.zeros(1, 1, 4, 4, dtype=torch.float64), dep)
        torch.testing.assert_close(vertices, torch.zeros_like(vertices))

    def test_output_shape(self):
        module = make_module(vertices=7)
        feat, crowd, level = make_inputs()
        dep = module.compute_dependency(level)
        assert module.project_vertices(feat, crowd, dep).shape == (1, 7, 16)

    def test_identity_dependency_reduces_to_embedding(self):
        module = make_module(grid=(1, 2))
        feat, crowd, level = make_inputs(grid=(1, 2), seed=9)
        eye = torch.eye(2, dtype=torch.float64).unsqueeze(0)
        vertices = module.project_vertices(feat, crowd, eye)
        expected = module.to_vertices(feat * crowd).flatten(2)
        torch.testing.assert_close(vertices, expected)

    def test_random_case_matches_loop_oracle(self):
        module = make_module(seed=5)
        feat, crowd, level = make_inputs(seed=5)
        dep = module.compute_dependency(level)
        vertices = module.project_vertices(feat, crowd, dep)
        emb = module.to_vertices(feat * crowd).flatten(2)[0].detach().numpy()
        expected = project_vertices_loops(dep[0].detach().numpy(), emb)
        np.testing.assert_allclose(vertices[0].detach().numpy(), expected, atol=1e-10)


class TestGraphConvolve:
    def test_identity_adjacency_zeroes_everything(self):
        module = make_module()
        with torch.no_grad():
            module.adjacency.copy_(torch.eye(16, dtype=torch.float64))
        vertices = torch.randn(1, 3, 16, dtype=torch.float64)
        out = module.graph_convolve(vertices)
        torch.testing.assert_close(out, torch.zeros_like(out))

    def test_zero_adjacency_identity_weight_is_relu(self):
        module = make_module()
        with torch.no_grad():
            module.adjacency.zero_()
            module.graph_weight.copy_(torch.eye(3, dtype=torch.float64))
        vertices = torch.randn(1, 3, 16, dtype=torch.float64)
        torch.testing.assert_close(module.graph_convolve(vertices), torch.relu(vertices))

    def test_random_instance_matches_triple_loop(self):
        module = make_module(vertices=3, grid=(2, 2), seed=7)
        with torch.no_grad():
            module.adjacency.copy_(torch.randn(4, 4, dtype=torch.float64) * 0.3)
            module.graph_weight.copy_(torch.randn(3, 3, dtype=torch.float64))
        vertices = torch.randn(1, 3, 4, dtype=torch.float64)
        out = module.graph_convolve(vertices)[0].detach().numpy()
        expected = graph_convolve_loops(
            vertices[0].numpy(), module.adjacency.detach().numpy(),
            module.graph_weight.detach().numpy(),
        )
        np.testing.assert_allclose(out, expected, atol=1e-6)


class TestReproject:
    def test_zero_vertices_zero_bias_is_identity(self):
        module = make_module()
        feat, _, _ = make_inputs()
        with torch.no_grad():
            module.from_vertices.bias.zero_()
        out = module.reproject(torch.zeros(1, 3, 16, dtype=torch.float64), feat)
        torch.testing.assert_close(out, feat)

    def test_output_shape(self):
        module = make_module()
        feat, crowd, level = make_inputs()
        assert module(feat, crowd, level).shape == (1, 4, 4, 4)

    def test_residual_path_gradient_is_identity(self):
        module = make_module()
        feat, _, _ = make_inputs(seed=11)
        feat = feat.requires_grad_(True)
        zeros = torch.zeros(1, 3, 16, dtype=torch.float64)
        module.reproject(zeros, feat).sum().backward()
        torch.testing.assert_close(feat.grad, torch.ones_like(feat))


class TestWholeModule:
    def test_matches_loop_oracle(self):
        for seed in range(3):
            module = make_module(seed=seed)
            with torch.no_grad():  # non-trivial parameters, not the near-zero init
                module.adjacency.copy_(torch.randn(16, 16, dtype=torch.float64) * 0.2)
                module.graph_weight.copy_(torch.randn(3, 3, dtype=torch.float64) * 0.5)
            feat, crowd, level = make_inputs(seed=seed)
            out = module(feat, crowd, level)[0].detach().numpy()
            expected = reasoning_module_loops(
                module, feat[0].numpy(), crowd[0].numpy(), level[0].numpy()
            )
            np.testing.assert_allclose(out, expected, atol=1e-5)

    def test_near_identity_at_init(self):
        module = make_module(seed=1)
        feat, crowd, level = make_inputs(seed=1)
        with torch.no_grad():
            out = module(feat, crowd, level)
        rel = (out - feat).norm() / feat.norm()
        assert float(rel) < 1e-2

    def test_pooling_path_shapes(self):
        # inputs larger than the grid are pooled down and upsampled back
        module = make_module(grid=(2, 2))
        feat, crowd, level = make_inputs(grid=(8, 8), seed=2)
        out = module(feat, crowd, level)
        assert out.shape == feat.shape

    def test_gradient_check_against_finite_differences(self):
        module = make_module(seed=13)
        feat, crowd, level = make_inputs(seed=13)
        params = dict(module.named_parameters())

        def scalar():
            return module(feat, crowd, level).pow(2).sum()

        loss = scalar()
        grads = torch.autograd.grad(loss, list(params.values()))
        grad_map = dict(zip(params.keys(), grads))
        rng = np.random.default_rng(0)
        eps = 1e-6
        names = [n for n in params if params[n].numel() > 0]
        for _ in range(20):
            name = names[rng.integers(0, len(names))]
            param = params[name]
            flat_idx = int(rng.integers(0, param.numel()))
            with torch.no_grad():
                base = param.view(-1)[flat_idx].item()
                param.view(-1)[flat_idx] = base + eps
                up = float(scalar())
                param.view(-1)[flat_idx] = base - eps
                down = float(scalar())
                param.view(-1)[flat_idx] = base
            fd = (up - down) / (2 * eps)
            ad = float(grad_map[name].view(-1)[flat_idx])
            assert abs(fd - ad) <= 1e-3 * max(abs(fd), abs(ad)) + 1e-7, name
