import numpy as np
import pytest

from cfgflow import domains, flow, net, targets
from conftest import sample_off_singular
from test_net import off_kink


def small_nets(seed, hidden=(8, 8), d=2):
    fp = net.init_mlp([d, *hidden, d], seed)
    zp = net.init_mlp([d, *hidden, 1], seed + 1000)
    return fp, zp


def fd_param_grad(loss_fn, params, step=1e-5):
    """Central differences of loss_fn() over every entry of params."""
    gw = [np.zeros_like(w) for w in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    for li in range(len(params.weights)):
        for arr, out in ((params.weights[li], gw[li]),
                         (params.biases[li], gb[li])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + step
                up = loss_fn()
                arr[idx] = old - step
                dn = loss_fn()
                arr[idx] = old
                out[idx] = (up - dn) / (2 * step)
    return gw, gb


def flat(grads):
    return np.concatenate([a.ravel() for a in grads[0] + grads[1]])


class TestVelocity:
    def test_push_branch_block(self):
        block = domains.make_block()
        fp, zp = small_nets(0)
        v = flow.velocity(fp, zp, block, 1.0, np.array([3.0, 0.0]))
        np.testing.assert_allclose(v, [-1.0, 0.0])

    def test_push_norm_is_lambda(self, toy_domains):
        rng = np.random.default_rng(3)
        fp, zp = small_nets(1)
        for dom in toy_domains.values():
            pts = rng.uniform(-4, 4, size=(200, 2))
            pts = pts[dom.g(pts) > 0.0]
            pts = pts[np.linalg.norm(dom.grad_g(pts), axis=1) > 1e-6]
            v = flow.velocity(fp, zp, dom, 2.0, pts)
            np.testing.assert_allclose(np.linalg.norm(v, axis=1),
                                       np.full(len(pts), 2.0), rtol=1e-9)

    def test_inside_branch_is_h_net(self):
        ring = domains.make_ring()
        fp, zp = small_nets(2)
        x = np.array([1.4, 0.1])
        assert ring.g(x) < 0
        np.testing.assert_array_equal(
            flow.velocity(fp, zp, ring, 1.0, x), net.h_net_eval(fp, zp, ring, x))

    def test_boundary_takes_push_branch(self):
        block = domains.make_block()
        fp, zp = small_nets(4)
        v = flow.velocity(fp, zp, block, 1.5, np.array([2.0, 0.5]))
        np.testing.assert_allclose(v, [-1.5, 0.0])


class TestPartition:
    def test_all_inside(self):
        block = domains.make_block()
        pos = np.zeros((7, 2))
        p = flow.partition(block, pos, 0.5)
        assert p.m == 7 and p.n == 0 and len(p.outside) == 0

    def test_all_outside(self):
        block = domains.make_block()
        pos = np.full((5, 2), 3.0)
        p = flow.partition(block, pos, 0.5)
        assert p.m == 0 and len(p.outside) == 5

    def test_covers_exactly_once(self):
        ring = domains.make_ring()
        pos = np.random.default_rng(0).uniform(-3, 3, size=(500, 2))
        p = flow.partition(ring, pos, 0.1)
        joined = np.sort(np.concatenate([p.inside, p.outside]))
        np.testing.assert_array_equal(joined, np.arange(500))
        assert set(p.band) <= set(np.flatnonzero(ring.g(pos) <= 0))

    def test_band_fraction_matches_area_on_grid(self):
        # cell-centered grid on the block: the h=0.1 collar holds
        # (4^2 - 3.8^2)/4^2 = 0.0975 of the cells
        block = domains.make_block()
        side = -2.0 + (np.arange(200) + 0.5) * 0.02
        gx, gy = np.meshgrid(side, side)
        pos = np.stack([gx.ravel(), gy.ravel()], axis=-1)
        p = flow.partition(block, pos, 0.1)
        assert p.n / p.m == pytest.approx(0.0975, abs=0.02)


class TestBoundaryTerm:
    def test_empty_band_is_zero(self):
        block = domains.make_block()
        fp, zp = small_nets(5)
        pos = np.zeros((4, 2))
        p = flow.partition(block, pos, 0.1)
        assert flow.boundary_term(fp, zp, block, p, pos, 0.1) == 0.0

    def test_single_band_particle_formula(self):
        block = domains.make_block()
        # constant field (1, 0): bias-only f net, z absent
        fp = net.MlpParams([np.zeros((2, 2))], [np.array([1.0, 0.0])])
        pos = np.vstack([np.zeros((9, 2)), [[1.95, 0.0]]])
        p = flow.partition(block, pos, 0.1)
        assert p.m == 10 and p.n == 1
        val = flow.boundary_term(fp, None, block, p, pos, 0.1)
        assert val == pytest.approx(1.0)

    def test_tangent_field_gives_zero(self):
        block = domains.make_block()
        fp = net.MlpParams([np.zeros((2, 2))], [np.array([0.0, 1.0])])
        pos = np.vstack([np.zeros((9, 2)), [[1.95, 0.0]]])
        p = flow.partition(block, pos, 0.1)
        assert flow.boundary_term(fp, None, block, p, pos, 0.1) == 0.0

    def test_scales_inversely_with_h(self):
        ring = domains.make_ring()
        fp, zp = small_nets(6)
        pos = sample_off_singular("ring", 300, seed=1)
        pos = pos[ring.g(pos) < 0][:120]
        h = 0.3
        p = flow.partition(ring, pos, h)
        assert p.n > 0
        b1 = flow.boundary_term(fp, zp, ring, p, pos, h)
        # same particle classification, halved width in the estimator
        b2 = flow.boundary_term(fp, zp, ring, p, pos, h / 2)
        assert b2 == pytest.approx(2 * b1)

    def test_m_zero_raises(self):
        block = domains.make_block()
        fp, zp = small_nets(7)
        pos = np.full((3, 2), 5.0)
        p = flow.partition(block, pos, 0.1)
        with pytest.raises(ValueError):
            flow.boundary_term(fp, zp, block, p, pos, 0.1)


class TestRsdLoss:
    def test_zero_nets_give_zero_loss(self):
        ring = domains.make_ring()
        tgt = targets.truncated_std_gaussian(ring)
        fp, zp = small_nets(8)
        for w in fp.weights + zp.weights:
            w[:] = 0.0
        pos = sample_off_singular("ring", 100, seed=2)
        pos = pos[ring.g(pos) < 0][:30]
        p = flow.partition(ring, pos, 0.05)
        assert flow.rsd_loss(fp, zp, ring, tgt, p, pos, 0.05) == pytest.approx(0.0)

    def test_constant_field_single_particle(self):
        ring = domains.make_ring()
        tgt = targets.truncated_std_gaussian(ring)
        c = np.array([0.3, -0.7])
        fp = net.MlpParams([np.zeros((2, 2))], [c.copy()])
        pos = np.array([[1.3, 0.0]])
        p = flow.partition(ring, pos, 1e-6)  # tiny h: no band particles
        assert p.m == 1 and p.n == 0
        s = tgt.score(pos[0])
        expected = -s @ c + 0.5 * c @ c
        assert flow.rsd_loss(fp, None, ring, tgt, p, pos, 1e-6) == \
            pytest.approx(expected)

    def test_quadratic_minimum_over_constant_fields(self):
        # min_c [-s.c + ||c||^2/2] = -||s||^2/2 at c = s
        ring = domains.make_ring()
        tgt = targets.truncated_std_gaussian(ring)
        pos = np.array([[1.3, 0.0]])
        p = flow.partition(ring, pos, 1e-6)
        s = tgt.score(pos[0])
        best = net.MlpParams([np.zeros((2, 2))], [s.copy()])
        val = flow.rsd_loss(best, None, ring, tgt, p, pos, 1e-6)
        assert val == pytest.approx(-0.5 * s @ s)
        for delta in (np.array([0.1, 0.0]), np.array([-0.2, 0.3])):
            other = net.MlpParams([np.zeros((2, 2))], [s + delta])
            assert flow.rsd_loss(other, None, ring, tgt, p, pos, 1e-6) > val

    def test_score_field_beats_zero_field_on_wide_cloud(self):
        # with particles spread wider than the target the exact-score field
        # is strictly better than the zero field
        dom = domains.make_lq_ball(1, 10.0, 2)
        tgt = targets.truncated_std_gaussian(dom)
        rng = np.random.default_rng(3)
        pos = 2.5 * rng.standard_normal((400, 2))
        pos = pos[dom.g(pos) < 0]
        p = flow.partition(dom, pos, 0.1)
        assert p.n == 0  # cloud stays away from the ball surface
        score_net = net.MlpParams([-np.eye(2)], [np.zeros(2)])
        zero_net = net.MlpParams([np.zeros((2, 2))], [np.zeros(2)])
        assert flow.rsd_loss(score_net, None, dom, tgt, p, pos, 0.1) < \
            flow.rsd_loss(zero_net, None, dom, tgt, p, pos, 0.1)

    def test_m_zero_raises(self):
        block = domains.make_block()
        tgt = targets.block_gaussian_mixture()
        fp, zp = small_nets(9)
        pos = np.full((3, 2), 4.0)
        p = flow.partition(block, pos, 0.1)
        with pytest.raises(ValueError):
            flow.rsd_loss(fp, zp, block, tgt, p, pos, 0.1)


def _ring_instance(n_particles=10, seed=4):
    ring = domains.make_ring()
    tgt = targets.truncated_std_gaussian(ring)
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-2.1, 2.1, size=(6 * n_particles, 2))
    keep = np.abs(np.sum(pos ** 2, axis=1) - 2.5) > 0.05
    pos = pos[keep][:n_particles]
    return ring, tgt, pos


class TestRsdLossGrad:
    def test_matches_fd_on_ring_instance(self):
        ring, tgt, pos = _ring_instance(10)
        fp, zp = small_nets(10)
        pos = off_kink(pos, fp, zp, tol=1e-3)
        h = 0.3
        p = flow.partition(ring, pos, h)
        assert p.m >= 5 and p.n >= 1
        fg, zg = flow.rsd_loss_grad(fp, zp, ring, tgt, p, pos, h)

        def loss():
            return flow.rsd_loss(fp, zp, ring, tgt, p, pos, h)

        fd_f = fd_param_grad(loss, fp)
        fd_z = fd_param_grad(loss, zp)
        for an, fd in ((fg, fd_f), (zg, fd_z)):
            err = np.linalg.norm(flat(an) - flat(fd))
            assert err / max(np.linalg.norm(flat(fd)), 1e-12) < 1e-3

    def test_band_empty_matches_interior_only_gradient(self):
        ring, tgt, pos = _ring_instance(12, seed=5)
        fp, zp = small_nets(11)
        tiny = 1e-9
        p = flow.partition(ring, pos, tiny)
        assert p.n == 0
        fg, zg = flow.rsd_loss_grad(fp, zp, ring, tgt, p, pos, tiny)
        batch = flow.make_loss_batch(ring, tgt, p, pos, tiny)
        _, fg2, zg2 = flow._batch_loss(fp, zp, batch, include_boundary=False,
                                       want_grads=True)
        np.testing.assert_array_equal(flat(fg), flat(fg2))
        np.testing.assert_array_equal(flat(zg), flat(zg2))

    def test_duplicating_particles_keeps_gradient(self):
        ring, tgt, pos = _ring_instance(14, seed=6)
        fp, zp = small_nets(12)
        h = 0.3
        p1 = flow.partition(ring, pos, h)
        doubled = np.vstack([pos, pos])
        p2 = flow.partition(ring, doubled, h)
        g1 = flow.rsd_loss_grad(fp, zp, ring, tgt, p1, pos, h)
        g2 = flow.rsd_loss_grad(fp, zp, ring, tgt, p2, doubled, h)
        np.testing.assert_allclose(flat(g1[0]), flat(g2[0]), rtol=1e-12)
        np.testing.assert_allclose(flat(g1[1]), flat(g2[1]), rtol=1e-12)


@pytest.mark.parametrize("name", ["ring", "cardioid", "double_moon", "block"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_grad_fd_all_domains(name, seed, toy_domains):
    dom = toy_domains[name]
    tgt = {"ring": lambda: targets.truncated_std_gaussian(dom),
           "cardioid": lambda: targets.truncated_std_gaussian(dom),
           "double_moon": targets.double_moon_target,
           "block": targets.block_gaussian_mixture}[name]()
    fp, zp = small_nets(20 + seed, hidden=(6, 5))
    pos = sample_off_singular(name, 400, seed=30 + seed)
    pos = off_kink(pos[dom.g(pos) < -1e-3], fp, zp, tol=1e-3)[:50]
    assert len(pos) == 50
    h = 0.2
    p = flow.partition(dom, pos, h)
    fg, zg = flow.rsd_loss_grad(fp, zp, dom, tgt, p, pos, h)

    def loss():
        return flow.rsd_loss(fp, zp, dom, tgt, p, pos, h)

    for params, an in ((fp, fg), (zp, zg)):
        fd = fd_param_grad(loss, params)
        err = np.linalg.norm(flat(an) - flat(fd))
        assert err / max(np.linalg.norm(flat(fd)), 1e-12) < 1e-3
