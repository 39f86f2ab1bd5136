"""Backend parity: every numba kernel must agree with its numpy fallback,
and the fused recurrence must agree with an op-composed reference."""

import numpy as np
import pytest

from silencio import kernels
from silencio.backend import HAVE_NUMBA
from silencio.tensorgrad import Tape, backward

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")


def _gru_args(rng, steps=7, din=5, hid=4):
    return (
        rng.normal(size=(steps, din)),
        rng.normal(size=(din, hid)) * 0.7,
        rng.normal(size=(din, hid)) * 0.7,
        rng.normal(size=(din, hid)) * 0.7,
        rng.normal(size=(hid, hid)) * 0.7,
        rng.normal(size=(hid, hid)) * 0.7,
        rng.normal(size=(hid, hid)) * 0.7,
        rng.normal(size=hid) * 0.4,
        rng.normal(size=hid) * 0.4,
        rng.normal(size=hid) * 0.4,
    )


@needs_numba
class TestBackendParity:
    @pytest.mark.parametrize("shape", [(1, 1, 1, 2), (9, 3, 3, 4), (20, 6, 5, 6)])
    def test_conv1d(self, shape, rng):
        t, cin, k, cout = shape
        x = rng.normal(size=(t, cin))
        w = rng.normal(size=(k, cin, cout))
        np.testing.assert_allclose(
            kernels.conv1d_fwd_np(x, w), kernels.conv1d_fwd_nb(x, w), rtol=1e-12, atol=1e-14
        )
        g = rng.normal(size=(t, cout))
        gx_np, gw_np = kernels.conv1d_bwd_np(x, w, g)
        gx_nb, gw_nb = kernels.conv1d_bwd_nb(x, w, g)
        np.testing.assert_allclose(gx_np, gx_nb, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(gw_np, gw_nb, rtol=1e-12, atol=1e-14)

    def test_gru(self, rng):
        args = _gru_args(rng)
        out_np = kernels.gru_fwd_np(*args)
        out_nb = kernels.gru_fwd_nb(*args)
        for a, b in zip(out_np, out_nb):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
        h, z, r, c = out_np
        gh = rng.normal(size=h.shape)
        gr_np = kernels.gru_bwd_np(*args[:7], z, r, c, h, gh)
        gr_nb = kernels.gru_bwd_nb(*args[:7], z, r, c, h, gh)
        for a, b in zip(gr_np, gr_nb):
            np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)

    @pytest.mark.parametrize("shape", [(1, 1), (1, 7), (6, 1), (12, 9)])
    def test_dtw(self, shape, rng):
        dist = np.abs(rng.normal(size=shape))
        acc_np = kernels.dtw_table_np(dist)
        acc_nb = kernels.dtw_table_nb(dist)
        np.testing.assert_allclose(acc_np, acc_nb, rtol=1e-13)
        vi_np, sj_np = kernels.dtw_backtrack_np(acc_np)
        vi_nb, sj_nb = kernels.dtw_backtrack_nb(acc_np)
        assert np.array_equal(vi_np, vi_nb)
        assert np.array_equal(sj_np, sj_nb)


class TestFusedRecurrenceAgainstComposedOps:
    """The fused sequence kernel vs the same recurrence spelled out from
    mul/sigmoid/tanh/matmul primitives, values and all ten gradients."""

    def _composed(self, tape, nodes, steps, hid):
        x, wz, wr, wh, uz, ur, uh, bz, br, bh = nodes
        one = tape.leaf(np.ones((1, hid)))
        h = tape.leaf(np.zeros((1, hid)))
        rows = []
        for n in range(steps):
            xn = tape.slice_time(x, n, n + 1)
            z = tape.sigmoid(tape.add(tape.add(tape.matmul(xn, wz), tape.matmul(h, uz)), bz))
            r = tape.sigmoid(tape.add(tape.add(tape.matmul(xn, wr), tape.matmul(h, ur)), br))
            c = tape.tanh(
                tape.add(tape.add(tape.matmul(xn, wh), tape.matmul(tape.mul(r, h), uh)), bh)
            )
            keep = tape.add(one, tape.mul_scalar(z, -1.0))
            h = tape.add(tape.mul(keep, h), tape.mul(z, c))
            rows.append(h)
        return tape.concat_time(*rows)

    def test_forward_and_gradients_match(self, rng):
        steps, din, hid = 6, 5, 4
        args = _gru_args(rng, steps, din, hid)
        biased = args[:7] + tuple(b.reshape(1, hid) for b in args[7:])

        fused_tape = Tape()
        fused_nodes = [fused_tape.leaf(a) for a in args]
        fused_out = fused_tape.gru_seq(*fused_nodes)
        fused_loss = fused_tape.mean(fused_tape.tanh(fused_out))
        fused_grads = backward(fused_tape, fused_loss)

        comp_tape = Tape()
        comp_nodes = [comp_tape.leaf(a) for a in biased]
        comp_out = self._composed(comp_tape, comp_nodes, steps, hid)
        comp_loss = comp_tape.mean(comp_tape.tanh(comp_out))
        comp_grads = backward(comp_tape, comp_loss)

        np.testing.assert_allclose(
            fused_tape.value(fused_out), comp_tape.value(comp_out), rtol=1e-12, atol=1e-14
        )
        for i, (fn, cn) in enumerate(zip(fused_nodes, comp_nodes)):
            f = fused_grads[fn]
            c = comp_grads[cn]
            np.testing.assert_allclose(
                f.reshape(c.shape), c, rtol=1e-10, atol=1e-13, err_msg=f"input {i}"
            )


class TestDtwKernelProperties:
    def test_table_prefix_sums_on_single_row(self, rng):
        dist = np.abs(rng.normal(size=(1, 6)))
        acc = kernels.dtw_table(dist)
        np.testing.assert_allclose(acc[0], np.cumsum(dist[0]), rtol=1e-14)

    def test_backtrack_endpoints_and_steps(self, rng):
        dist = np.abs(rng.normal(size=(7, 9)))
        vi, sj = kernels.dtw_backtrack(kernels.dtw_table(dist))
        assert (vi[0], sj[0]) == (0, 0)
        assert (vi[-1], sj[-1]) == (6, 8)
        di, dj = np.diff(vi), np.diff(sj)
        assert set(zip(di.tolist(), dj.tolist())) <= {(1, 0), (0, 1), (1, 1)}
        assert set(vi.tolist()) == set(range(7))
        assert set(sj.tolist()) == set(range(9))
