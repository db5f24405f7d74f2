# Copyright 2026 The invgrad Authors
# SPDX-License-Identifier: Apache-2.0
"""Smoke tests for the python bindings."""

import numpy as np
import pytest

import invgrad


def make_net(**kw):
    args = dict(
        height=8,
        width=8,
        channels=2,
        layers_per_block=[1, 1, 1],
        subnet_depth=2,
        hidden_width=4,
        classes=2,
        seed=5,
    )
    args.update(kw)
    return invgrad.Network(**args)


def sample_input(net, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(scale=0.6, size=net.input_shape)


def test_version_and_strategies():
    assert invgrad.__version__
    assert set(invgrad.STRATEGIES) == {
        "Backprop",
        "Forward",
        "ProjForward",
        "RevBackprop",
        "Moonwalk",
        "Mixed",
    }


def test_exact_strategies_agree():
    net = make_net()
    x = sample_input(net)
    reports = {
        s: invgrad.compute_gradients(net, x, 1, strategy=s)
        for s in ("Backprop", "Moonwalk", "Mixed", "RevBackprop")
    }
    ref = np.concatenate(
        [g for g in reports["Backprop"]["layer_grads"] if g.size]
        + [reports["Backprop"]["head_grad"]]
    )
    for name, rep in reports.items():
        flat = np.concatenate(
            [g for g in rep["layer_grads"] if g.size] + [rep["head_grad"]]
        )
        err = np.max(np.abs(flat - ref)) / max(np.max(np.abs(ref)), 1e-30)
        assert err <= 1e-7, f"{name} deviates from Backprop by {err}"
        assert rep["loss"] == pytest.approx(reports["Backprop"]["loss"])


def test_backprop_matches_finite_differences():
    net = make_net()
    x = sample_input(net, seed=1)
    rep = invgrad.compute_gradients(net, x, 0, strategy="Backprop")
    flat = np.concatenate(
        [g for g in rep["layer_grads"] if g.size] + [rep["head_grad"]]
    )
    fd = invgrad.fd_gradient(net, x, 0, eps=1e-5)
    scale = np.maximum(np.abs(fd), 1e-3 * np.max(np.abs(fd)))
    assert np.max(np.abs(flat - fd) / scale) <= 1e-5


def test_memory_ordering():
    net = make_net(layers_per_block=[2, 2, 2])
    x = sample_input(net, seed=2)
    peak = {
        s: invgrad.compute_gradients(net, x, 0, strategy=s)[
            "peak_tracked_bytes"
        ]
        for s in ("Backprop", "Moonwalk", "Mixed")
    }
    assert peak["Backprop"] > peak["Moonwalk"]
    assert peak["Backprop"] >= peak["Mixed"] >= peak["Moonwalk"]
    # streaming: phase 2 holds one gradient buffer at a time
    rep = invgrad.compute_gradients(net, x, 0, strategy="Moonwalk")
    assert rep["peak_gradient_buffers"] == 1


def test_sweep_rows():
    net = make_net()
    rows = invgrad.run_sweep(
        net, layers_grid=[1, 3], strategies=["Backprop", "Moonwalk"]
    )
    assert len(rows) == 4
    bp = [r["peak_bytes"] for r in rows if r["strategy"] == "Backprop"]
    mw = [r["peak_bytes"] for r in rows if r["strategy"] == "Moonwalk"]
    assert bp[1] > bp[0]  # grows with depth
    assert mw[1] == mw[0]  # flat
    for r in rows:
        assert r["status"] == "ok"
        assert r["max_rel_err"] <= 1e-7


def test_dataset_determinism():
    a = invgrad.generate_dataset(count=10, seed=3)
    b = invgrad.generate_dataset(count=10, seed=3)
    for (la, va), (lb, vb) in zip(a, b):
        assert la == lb
        assert np.array_equal(va, vb)


def test_projforward_is_seeded_and_stochastic():
    net = make_net()
    x = sample_input(net, seed=4)
    r1 = invgrad.compute_gradients(net, x, 0, strategy="ProjForward", seed=9)
    r2 = invgrad.compute_gradients(net, x, 0, strategy="ProjForward", seed=9)
    r3 = invgrad.compute_gradients(net, x, 0, strategy="ProjForward", seed=10)
    assert r1["stochastic"] and r1["tangent_seed"] == 9
    assert np.array_equal(r1["head_grad"], r2["head_grad"])
    assert not np.array_equal(r1["head_grad"], r3["head_grad"])


def test_invalid_configs_raise():
    with pytest.raises(invgrad.InvgradError):
        invgrad.Network(channels=3)  # odd channels cannot couple
    net = make_net()
    with pytest.raises(invgrad.InvgradError):
        invgrad.compute_gradients(net, np.zeros(7), 0)
