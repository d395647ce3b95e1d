"""Self-contained oracle and invariant checks, printed one PASS/FAIL per line.

These are the fast subset of the verification suite (the full suite lives in
tests/); `lgse selftest` runs them without pytest. Reference values are
computed by naive independent evaluators, never by the code under test.
"""

from __future__ import annotations

import time
import traceback

import numpy as np

from . import dsp, evaluate, objectives, posenc, training
from .dsp import DEFAULT_STFT, Waveform
from .model import EnhancementModel, ModelConfig
from .numerics import Tensor, backward, finite_difference
from .posenc import PeKind


# -- naive reference evaluators (per-pair loops, no Toeplitz shortcut) --------


def naive_bias(kind: PeKind, length: int, params: dict) -> np.ndarray:
    # Scalar np.exp/np.log so elementary functions match the built path bitwise.
    out = np.zeros((length, length))
    for i in range(length):
        for j in range(length):
            r = i - j
            if kind is PeKind.GAUSS:
                s = params["sigma"]
                out[i, j] = -(float(r) ** 2 / (s * s * 2.0))
            elif kind is PeKind.T5:
                out[i, j] = params["bucket"][posenc.t5_bucket_index(r)]
            elif kind is PeKind.TISA:
                acc = 0.0
                for a, b, c in zip(params["a"], params["b"], params["c"]):
                    d = np.float64(j - i) - c
                    acc += np.exp(-(abs(b) * (d * d))) * a
                out[i, j] = acc
            elif kind is PeKind.DABIAS:
                w, v = params["w"], params["v"]
                out[i, j] = (np.exp(v) + 1.0) / (np.exp(v - float(abs(r)) * w) + 1.0)
            elif kind is PeKind.KERPLE:
                r1, r2 = np.exp(params["rho1"]), np.exp(params["rho2"])
                out[i, j] = -(r1 * np.log(float(abs(r)) * r2 + 1.0))
            elif kind is PeKind.LEARNLIN:
                out[i, j] = float(abs(r)) * params["beta"]
    return out


def built_bias(kind: PeKind, length: int, params: dict) -> np.ndarray:
    if kind is PeKind.GAUSS:
        return posenc.gauss_bias(length, Tensor(params["sigma"])).data
    if kind is PeKind.T5:
        return posenc.t5_bias(length, Tensor(params["bucket"])).data
    if kind is PeKind.TISA:
        return posenc.tisa_bias(length, Tensor(params["a"]), Tensor(params["b"]),
                                Tensor(params["c"])).data
    if kind is PeKind.DABIAS:
        return posenc.da_bias(length, Tensor(params["w"]), Tensor(params["v"])).data
    if kind is PeKind.KERPLE:
        return posenc.kerple_bias(length, Tensor(params["rho1"]),
                                  Tensor(params["rho2"])).data
    if kind is PeKind.LEARNLIN:
        return posenc.learnlin_bias(length, Tensor(params["beta"])).data
    raise ValueError(kind)


def random_bias_params(kind: PeKind, rng: np.random.Generator) -> dict:
    if kind is PeKind.GAUSS:
        return {"sigma": float(rng.uniform(0.5, 20.0))}
    if kind is PeKind.T5:
        return {"bucket": rng.normal(size=posenc.T5_BUCKETS)}
    if kind is PeKind.TISA:
        return {"a": rng.normal(size=5), "b": rng.normal(size=5),
                "c": rng.uniform(-8, 8, size=5)}
    if kind is PeKind.DABIAS:
        return {"w": float(rng.uniform(-0.5, 0.5)), "v": float(rng.normal())}
    if kind is PeKind.KERPLE:
        return {"rho1": float(rng.normal()), "rho2": float(rng.normal())}
    if kind is PeKind.LEARNLIN:
        return {"beta": float(rng.uniform(-1, 1))}
    raise ValueError(kind)


_BIAS_KINDS = (PeKind.GAUSS, PeKind.T5, PeKind.TISA, PeKind.DABIAS,
               PeKind.KERPLE, PeKind.LEARNLIN)


# -- checks -------------------------------------------------------------------


def check_param_counts():
    """Reference trainable-parameter counts at H=8, N=4, S=5."""
    expected = {PeKind.LEARNLIN: 8, PeKind.GAUSS: 8, PeKind.DABIAS: 16,
                PeKind.KERPLE: 16, PeKind.T5: 256, PeKind.TISA: 480,
                PeKind.SINUSOIDAL: 0, PeKind.NOPOS: 0, PeKind.ROPE: 0}
    for kind, want in expected.items():
        got = posenc.param_count(kind, heads=8, layers=4, kernels=5)
        assert got == want, f"{kind.value}: {got} != {want}"
    assert posenc.param_count(PeKind.BERTPOS, heads=8, max_len=64,
                              d_model=256) == 64 * 256


def check_bias_oracle():
    rng = np.random.default_rng(11)
    for kind in _BIAS_KINDS:
        for length in (3, 17, 64):
            params = random_bias_params(kind, rng)
            built = built_bias(kind, length, params)
            naive = naive_bias(kind, length, params)
            assert np.array_equal(built, naive), f"{kind.value} L={length}"
            # Toeplitz and extension consistency.
            ext = built_bias(kind, length + 16, params)
            assert np.array_equal(ext[:length, :length], built), kind.value
            assert np.array_equal(built[:-1, :-1], built[1:, 1:]), kind.value


def check_t5_fixtures():
    fixtures = {0: 0, 7: 7, 8: 8, 128: 15, -3: 19, -8: 24}
    for rel, want in fixtures.items():
        got = posenc.t5_bucket_index(rel)
        assert got == want, f"offset {rel}: bucket {got} != {want}"


def check_stft_roundtrip():
    rng = np.random.default_rng(3)
    for dur in (1.0, 3.5):
        n = int(dur * dsp.SAMPLE_RATE)
        x = rng.uniform(-0.5, 0.5, n)
        spec = dsp.stft(Waveform(x), DEFAULT_STFT)
        y = dsp.istft(spec, DEFAULT_STFT, out_len=n).samples
        lo, hi = DEFAULT_STFT.win_len, (spec.shape[0] - 1) * DEFAULT_STFT.hop
        err = np.max(np.abs(x[lo:hi] - y[lo:hi]))
        assert err < 1e-10, f"round-trip error {err}"


def check_framing():
    assert dsp.frame_count(16000) == 61
    spec = dsp.stft(Waveform(np.zeros(512)))
    assert spec.shape == (1, 257)
    assert np.max(np.abs(spec)) == 0.0


def check_oracle_masks():
    corpus = dsp.synth_corpus(5, 2, 1.0)
    for utt in corpus:
        noisy = dsp.mix_at_snr(utt.clean, utt.noise, 0)
        gain = dsp.noise_gain_for_snr(utt.clean.samples, utt.noise.samples, 0)
        spec_x = dsp.stft(noisy)
        spec_s = dsp.stft(utt.clean)
        spec_v = dsp.stft(Waveform(gain * utt.noise.samples))
        before = evaluate.si_sdr(noisy, utt.clean)
        for kind in objectives.TargetKind:
            pred = objectives.target_grid(kind, spec_s, spec_v, spec_x)
            out = objectives.apply_target(spec_x, pred, kind)
            est = dsp.istft(out, DEFAULT_STFT, out_len=len(noisy))
            after = evaluate.si_sdr(est, utt.clean)
            assert after - before > 5.0, f"{kind.value}: {after - before:.2f} dB"


def check_lr_schedule():
    for d_model, w in ((256, 4000), (32, 250)):
        peak = training.lr_schedule(w, w, d_model)
        assert peak == d_model ** -0.5 * w ** -0.5
        for n in range(1, w):
            assert training.lr_schedule(n, w, d_model) < training.lr_schedule(n + 1, w, d_model)
        for n in range(w, 2 * w, max(1, w // 10)):
            assert training.lr_schedule(n, w, d_model) > training.lr_schedule(n + 1, w, d_model)


def check_chunk_counts():
    n = 20 * dsp.SAMPLE_RATE
    c = 1 * dsp.SAMPLE_RATE
    assert len(evaluate.chunk_starts(n, c, 0)) == 20
    assert len(evaluate.chunk_starts(n, c, 0.5)) == 39


def check_gradient_small():
    cfg = ModelConfig(n_layers=1, n_heads=2, d_model=8, d_ff=16, k_bins=9,
                      pe_kind="learnlin", target="irm", init_seed=7)
    model = EnhancementModel(cfg)
    rng = np.random.default_rng(1)
    x = rng.uniform(0.0, 1.5, (5, 9))
    target = rng.uniform(0.0, 1.0, (5, 9))
    names = list(model.params)
    sizes = [model.params[n].size for n in names]

    def loss_at(flat):
        offset = 0
        for n, s in zip(names, sizes):
            model.params[n].data = flat[offset:offset + s].reshape(
                model.params[n].shape)
            offset += s
        return float(training.mse_loss(model.forward(x), target).data)

    flat0 = np.concatenate([model.params[n].data.ravel() for n in names])
    model.zero_grad()
    loss = training.mse_loss(model.forward(x), target)
    backward(loss)
    grads = np.concatenate([
        (model.params[n].grad if model.params[n].grad is not None
         else np.zeros(model.params[n].shape)).ravel() for n in names])
    fd = finite_difference(loss_at, flat0)
    loss_at(flat0)
    err = np.abs(grads - fd)
    tol = 1e-4 * np.maximum(1e-4, np.maximum(np.abs(grads), np.abs(fd)))
    bad = np.where(err > np.maximum(tol, 1e-8))[0]
    assert bad.size == 0, f"{bad.size} gradient mismatches; worst {err.max():.3g}"


def check_mix_snr():
    rng = np.random.default_rng(2)
    clean = Waveform(rng.uniform(-0.3, 0.3, 8000))
    noise = Waveform(rng.uniform(-0.3, 0.3, 8000))
    for snr in (-10, 0, 20):
        mix = dsp.mix_at_snr(clean, noise, snr)
        scaled = mix.samples - clean.samples
        measured = 10 * np.log10(np.sum(clean.samples ** 2) / np.sum(scaled ** 2))
        assert abs(measured - snr) < 1e-9


CHECKS = [
    ("posenc", "param_counts", check_param_counts, False),
    ("posenc", "bias_oracle", check_bias_oracle, False),
    ("posenc", "t5_bucket_fixtures", check_t5_fixtures, False),
    ("dsp", "framing", check_framing, False),
    ("dsp", "stft_roundtrip", check_stft_roundtrip, False),
    ("dsp", "mix_at_snr", check_mix_snr, False),
    ("objectives", "oracle_masks", check_oracle_masks, False),
    ("training", "lr_schedule", check_lr_schedule, False),
    ("eval", "chunk_counts", check_chunk_counts, False),
    ("numerics", "model_gradient_check", check_gradient_small, True),
]


def run(fast: bool = False) -> int:
    """Run all checks; print one line per check plus a per-module verdict."""
    failures = 0
    module_ok: dict[str, bool] = {}
    for module, name, fn, slow in CHECKS:
        if fast and slow:
            continue
        start = time.perf_counter()
        try:
            fn()
            ok = True
            detail = ""
        except Exception as exc:  # noqa: BLE001 - report, don't crash the suite
            ok = False
            detail = f"  ({exc})"
            traceback.print_exc()
        elapsed = time.perf_counter() - start
        module_ok[module] = module_ok.get(module, True) and ok
        status = "PASS" if ok else "FAIL"
        print(f"{status}  {module}.{name}  [{elapsed:.2f}s]{detail}")
        failures += 0 if ok else 1
    print("-" * 40)
    for module, ok in module_ok.items():
        print(f"{'PASS' if ok else 'FAIL'}  module {module}")
    return 0 if failures == 0 else 1


if __name__ == "__main__":
    raise SystemExit(run())
