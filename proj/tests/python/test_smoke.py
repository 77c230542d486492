import os
import subprocess

import numpy as np
import pytest

import techdet

SR = techdet.SAMPLE_RATE


def tone(seconds, hz, amp=0.5):
    t = np.arange(int(seconds * SR)) / SR
    return (amp * np.sin(2 * np.pi * hz * t)).astype(np.float32)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("lib")
    rows = ["path,label"]
    for i, (label, hz) in enumerate([("tone", 440), ("tone", 330), ("other", 0), ("other", 0)]):
        rng = np.random.default_rng(i)
        clip = tone(1.2, hz) if hz else (0.2 * rng.standard_normal(int(0.9 * SR))).astype(np.float32)
        techdet.write_wav(root / f"c{i}.wav", np.clip(clip, -1, 1))
        rows.append(f"c{i}.wav,{label}")
    (root / "clips.csv").write_text("\n".join(rows) + "\n")
    (root / "vocab.txt").write_text("tone\nother\n")
    manifest = techdet.synthesize(root / "clips.csv", root / "vocab.txt", 3, 5, root / "data")
    return root, manifest


def test_wav_round_trip(tmp_path):
    x = tone(0.5, 1000.0)
    techdet.write_wav(tmp_path / "x.wav", x)
    y = techdet.read_wav(tmp_path / "x.wav")
    assert y.dtype == np.float32
    assert y.shape == x.shape
    assert np.max(np.abs(x - y)) <= 1 / 32768


def test_mel_shape_and_windows():
    mel = techdet.mel_spectrogram(np.zeros(SR * 10, dtype=np.float32))
    assert mel.shape == (128, 200)
    assert np.allclose(mel, np.log(1e-10))
    assert techdet.plan_windows(30.0) == [2.0 * i for i in range(11)]


def test_untrained_model_posteriors():
    model = techdet.Model.init(["a", "b", "other"], seed=1)
    p = model.posteriors(tone(10.0, 440.0))
    assert p.shape == (3, 200)
    assert np.allclose(p.sum(axis=0), 1.0)
    assert model.config["n_classes"] == 3
    events = model.detect(tone(12.5, 440.0))
    assert events[0][0] == 0.0
    assert events[-1][1] == pytest.approx(12.5)


def test_train_detect_evaluate(dataset, tmp_path):
    root, manifest = dataset
    model, losses = techdet.train(manifest, epochs=2, seed=3)
    assert len(losses) == 2
    assert model.labels == ["tone", "other"]
    model.save(tmp_path / "m.ckpt")
    again = techdet.Model.load(tmp_path / "m.ckpt")
    seg = techdet.read_wav(root / "data" / "segment_00000.wav")
    assert np.array_equal(model.posteriors(seg), again.posteriors(seg))
    report = techdet.evaluate(again, manifest)
    assert len(report["segment_accuracy"]) == 3
    assert 0.0 <= report["average_accuracy"] <= 1.0


def test_errors_map_to_python(tmp_path):
    with pytest.raises(ValueError):
        techdet.read_wav(tmp_path / "missing.wav")
    with pytest.raises(techdet.InputError):
        techdet.frame_accuracy([0, 1], [0])
    assert techdet.frame_accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75


def test_cli_exit_codes(dataset, tmp_path):
    cli = os.environ.get("TECHDET_CLI")
    if not cli:
        pytest.skip("TECHDET_CLI not set")
    _, manifest = dataset
    ok = subprocess.run([cli, "eval", "--oracle", "--manifest", str(manifest),
                         "--out", str(tmp_path / "r.json")], capture_output=True)
    assert ok.returncode == 0
    bad = subprocess.run([cli, "detect", "--checkpoint", str(tmp_path / "none.ckpt"),
                          "--wav", "x.wav", "--out", str(tmp_path / "e.jsonl")], capture_output=True)
    assert bad.returncode == 1
