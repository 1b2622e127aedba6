"""Quick end-to-end check of the fdn_py extension.

Build and run from the repository root:

    cargo build -p fdn-py --features extension-module --release
    cp target/release/libfdn_py.so python/fdn_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import fdn_py  # noqa: E402


def tone(freq, n, rate=16000):
    return [0.3 * math.sin(2 * math.pi * freq * i / rate) for i in range(n)]


def main():
    full = fdn_py.ModelConfig(variant="light", alpha=8, speakers=6112)
    count = fdn_py.count_parameters(full)
    assert abs(count / 13.06e6 - 1) <= 0.02, count
    print(f"light alpha 8: {count} parameters")

    config = fdn_py.ModelConfig(variant="heavy", tiny=True, speakers=4)
    config.set("crop_samples", "6561")
    model = fdn_py.Model(config, seed=0)
    assert model.num_parameters() == fdn_py.count_parameters(config)

    a = model.embed(tone(220, 8000))
    b = model.embed(tone(330, 8000))
    assert len(a) == config.embedding_dim
    assert abs(sum(x * x for x in a) - 1) < 1e-9
    assert abs(fdn_py.cosine_score(a, a) - 1) < 1e-12
    print(f"cosine(220 Hz, 330 Hz) = {fdn_py.cosine_score(a, b):.6f}")

    emb, logits = model.infer(tone(220, config.crop_samples))
    assert len(logits) == 4 and len(emb) == config.embedding_dim

    eer, _ = fdn_py.compute_eer([0.9, 0.8, 0.3, 0.1], [True, True, False, False])
    assert eer == 0.0, eer

    x = tone(440, 1000)
    assert fdn_py.speed_perturb(x, 1.0) == x
    assert len(fdn_py.speed_perturb(x, 2.0)) == 500
    assert fdn_py.pre_emphasis([1.0, 1.0], 0.97)[1] == 1.0 - 0.97
    assert fdn_py.crop_or_pad([1.0, 2.0, 3.0], 5) == [1.0, 2.0, 3.0, 1.0, 2.0]

    with tempfile.TemporaryDirectory() as d:
        wav = os.path.join(d, "t.wav")
        fdn_py.write_wav(wav, x)
        y, rate = fdn_py.read_wav(wav)
        assert rate == 16000 and len(y) == len(x)
        assert max(abs(p - q) for p, q in zip(x, y)) <= 1 / 32768

        ckpt = os.path.join(d, "m.ckpt")
        model.save(ckpt)
        again = fdn_py.Model.load(ckpt)
        assert again.embed(tone(220, 8000)) == a

    # embed() pads short utterances cyclically; infer() takes lengths as given.
    assert len(model.embed(tone(220, 100))) == config.embedding_dim
    try:
        model.infer(tone(220, 100))
    except ValueError as e:
        print(f"short input rejected: {e}")
    else:
        raise AssertionError("short input accepted")

    print("ok")


if __name__ == "__main__":
    main()
