import json
import wave as wavmod
from pathlib import Path

import numpy as np
import pytest

from phonepool.cli import main
from phonepool.corpusio import read_archive_dict


def write_wav(path, samples, sr=16000):
    pcm = (np.clip(samples, -1, 1) * 32767).astype("<i2")
    with wavmod.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sr)
        f.writeframes(pcm.tobytes())


@pytest.fixture
def wav_manifest(tmp_path):
    rng = np.random.default_rng(0)
    rows = ["utt_id\tspeaker_id\taudio_path\tduration_ms\ttranscript\ttranslation"]
    for i in range(3):
        wav = tmp_path / f"u{i}.wav"
        t = np.arange(16000) / 16000.0
        write_wav(wav, 0.3 * np.sin(2 * np.pi * (300 + 200 * i) * t)
                  + 0.01 * rng.standard_normal(16000))
        rows.append(f"u{i}\tspk{i % 2}\t{wav}\t1000\thola\thello")
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return manifest


def write_figure1_fixture(tmp_path):
    """50-frame utterance with 8 label runs."""
    rng = np.random.default_rng(1)
    data = rng.standard_normal((50, 6)).astype(np.float32)
    lines = ["u1  ["]
    for i, row in enumerate(data):
        tail = " ]" if i == 49 else ""
        lines.append("  " + " ".join(f"{v:.9g}" for v in row) + tail)
    feats = tmp_path / "feats.ark"
    feats.write_text("\n".join(lines) + "\n", encoding="utf-8")
    labels = np.repeat(["sil", "a", "b", "a", "c", "sil", "b", "c"],
                       [9, 5, 7, 6, 8, 4, 6, 5])
    ali = tmp_path / "ali.txt"
    ali.write_text("u1 " + " ".join(labels) + "\n", encoding="utf-8")
    inv = tmp_path / "inv.txt"
    inv.write_text("sil\na\nb\nc\n", encoding="utf-8")
    return feats, ali, inv


class TestFbankCmvn:
    def test_fbank_then_cmvn(self, tmp_path, wav_manifest):
        out = tmp_path / "feats.ark"
        assert main(["fbank", "--manifest", str(wav_manifest),
                     "--out", str(out)]) == 0
        feats = read_archive_dict(str(out))
        assert set(feats) == {"u0", "u1", "u2"}
        assert all(m.shape == (98, 40) for m in feats.values())

        norm = tmp_path / "cmvn.ark"
        assert main(["cmvn", "--feats", str(out), "--manifest",
                     str(wav_manifest), "--out", str(norm)]) == 0
        normed = read_archive_dict(str(norm))
        pooled = np.concatenate([normed["u0"], normed["u2"]])  # spk0
        np.testing.assert_allclose(pooled.mean(0), 0.0, atol=1e-4)

    def test_fbank_jobs_flag_matches_serial(self, tmp_path, wav_manifest):
        a = tmp_path / "a.ark"
        b = tmp_path / "b.ark"
        assert main(["fbank", "--manifest", str(wav_manifest), "--out",
                     str(a)]) == 0
        assert main(["fbank", "--manifest", str(wav_manifest), "--out",
                     str(b), "--jobs", "2"]) == 0
        assert a.read_text() == b.read_text()

    def test_config_file_overridden_by_flags(self, tmp_path, wav_manifest):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"frontend": {"num_mel_bins": 30}}))
        out = tmp_path / "f30.ark"
        assert main(["fbank", "--manifest", str(wav_manifest), "--out",
                     str(out), "--config", str(cfg)]) == 0
        assert next(iter(read_archive_dict(str(out)).values())).shape[1] == 30
        out2 = tmp_path / "f20.ark"
        assert main(["fbank", "--manifest", str(wav_manifest), "--out",
                     str(out2), "--config", str(cfg), "--num-mel-bins", "20"]) == 0
        assert next(iter(read_archive_dict(str(out2)).values())).shape[1] == 20


class TestPoolStrideStats:
    def test_pool_figure1_fixture(self, tmp_path, capsys):
        feats, ali, inv = write_figure1_fixture(tmp_path)
        pooled = tmp_path / "pooled.ark"
        segs = tmp_path / "segs.txt"
        rep_json = tmp_path / "report.json"
        assert main(["pool", "--feats", str(feats), "--ali", str(ali),
                     "--inventory", str(inv), "--out-feats", str(pooled),
                     "--out-segments", str(segs),
                     "--report-json", str(rep_json),
                     "--silence-labels", "sil"]) == 0
        out = capsys.readouterr().out
        assert "reduction_ratio=0.84" in out
        mat = read_archive_dict(str(pooled))["u1"]
        assert mat.shape == (8, 6)
        report = json.loads(rep_json.read_text())
        assert report["num_frames"] == 50
        assert report["num_segments"] == 8
        assert report["silence_run_fraction"] == 0.25
        assert segs.read_text().startswith("u1 sil:0:8 a:9:13")

    def test_stride(self, tmp_path):
        rng = np.random.default_rng(2)
        lines = ["u1  ["]
        data = rng.standard_normal((10, 3)).astype(np.float32)
        for i, row in enumerate(data):
            lines.append("  " + " ".join(f"{v:.9g}" for v in row)
                         + (" ]" if i == 9 else ""))
        feats = tmp_path / "f.ark"
        feats.write_text("\n".join(lines) + "\n")
        out = tmp_path / "s.ark"
        assert main(["stride", "--feats", str(feats), "--n", "2",
                     "--out", str(out)]) == 0
        assert read_archive_dict(str(out))["u1"].shape == (5, 3)

    def test_stats(self, tmp_path, capsys):
        feats, ali, inv = write_figure1_fixture(tmp_path)
        assert main(["stats", "--feats", str(feats), "--ali", str(ali),
                     "--inventory", str(inv)]) == 0
        assert "num_segments=8" in capsys.readouterr().out


class TestAliExpand:
    def test_expand(self, tmp_path):
        lines = ["u1  ["]
        for i in range(7):
            lines.append("  1 2" + (" ]" if i == 6 else ""))
        feats = tmp_path / "f.ark"
        feats.write_text("\n".join(lines) + "\n")
        inv = tmp_path / "inv.txt"
        inv.write_text("a\nb\n<blk>\n")
        spliced = tmp_path / "spliced.txt"
        spliced.write_text("u1 a <blk>\n")
        out = tmp_path / "ali.txt"
        assert main(["ali-expand", "--spliced", str(spliced), "--feats",
                     str(feats), "--inventory", str(inv), "--out",
                     str(out)]) == 0
        assert out.read_text() == "u1 a a a <blk> <blk> <blk> <blk>\n"


class TestBpe:
    def test_learn_and_apply(self, tmp_path):
        text = tmp_path / "text.txt"
        text.write_text("\n".join(["low"] * 5 + ["lower"] * 2 + ["newest"] * 6
                                  + ["widest"] * 3) + "\n")
        merges = tmp_path / "merges.txt"
        assert main(["bpe-learn", "--text", str(text), "--merges", "3",
                     "--out", str(merges)]) == 0
        assert merges.read_text().splitlines() == ["e s", "es t</w>", "l o"]
        out = tmp_path / "seg.txt"
        assert main(["bpe-apply", "--text", str(text), "--merges", str(merges),
                     "--out", str(out)]) == 0
        assert out.read_text().splitlines()[0] == "lo w</w>"  # ("l","o") applies


class TestToygenCompareTrainDecode:
    def test_toygen_deterministic(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert main(["toygen", "--out", str(out), "--utterances", "20",
                         "--seed", "7"]) == 0
        for name in ("train.feats.ark", "train.ali.txt", "train.text.txt",
                     "dev.feats.ark", "inventory.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_train_then_decode(self, tmp_path):
        data = tmp_path / "toy"
        assert main(["toygen", "--out", str(data), "--utterances", "30",
                     "--symbols", "4", "--seed", "3"]) == 0
        ckpt = tmp_path / "model.npz"
        vocab = tmp_path / "vocab.txt"
        log = tmp_path / "log.jsonl"
        assert main(["train",
                     "--feats", str(data / "train.feats.ark"),
                     "--text", str(data / "train.text.txt"),
                     "--dev-feats", str(data / "dev.feats.ark"),
                     "--dev-text", str(data / "dev.text.txt"),
                     "--out", str(ckpt), "--vocab-out", str(vocab),
                     "--log", str(log), "--epochs", "1", "--hidden", "8",
                     "--embed-dims", "4", "--attn-hidden", "4",
                     "--norm", "layer", "--seed", "1"]) == 0
        records = [json.loads(ln) for ln in log.read_text().splitlines()]
        assert len(records) == 1
        assert {"epoch", "train_loss", "dev_metric", "lr", "wall_time_s"} \
            <= set(records[0])
        hyp = tmp_path / "hyp.txt"
        assert main(["decode", "--checkpoint", str(ckpt),
                     "--feats", str(data / "dev.feats.ark"),
                     "--vocab", str(vocab), "--out", str(hyp),
                     "--beam", "3"]) == 0
        lines = hyp.read_text().splitlines()
        assert len(lines) == 3  # 10% dev split of 30
        assert all(ln.split()[0].startswith("toy") for ln in lines)

    def test_decode_rejects_mismatched_vocab(self, tmp_path):
        data = tmp_path / "toy"
        main(["toygen", "--out", str(data), "--utterances", "20", "--seed", "3"])
        ckpt = tmp_path / "model.npz"
        vocab = tmp_path / "vocab.txt"
        main(["train", "--feats", str(data / "train.feats.ark"),
              "--text", str(data / "train.text.txt"),
              "--dev-feats", str(data / "dev.feats.ark"),
              "--dev-text", str(data / "dev.text.txt"),
              "--out", str(ckpt), "--vocab-out", str(vocab),
              "--epochs", "1", "--hidden", "4", "--embed-dims", "3",
              "--attn-hidden", "3", "--norm", "layer"])
        vocab.write_text(vocab.read_text().replace("w00", "zzz"))
        assert main(["decode", "--checkpoint", str(ckpt),
                     "--feats", str(data / "dev.feats.ark"),
                     "--vocab", str(vocab), "--out",
                     str(tmp_path / "h.txt")]) == 1


class TestExitCodes:
    def test_missing_file_is_io_error(self, tmp_path):
        assert main(["stride", "--feats", str(tmp_path / "nope.ark"),
                     "--n", "2", "--out", str(tmp_path / "o.ark")]) == 2

    def test_validation_error_is_one(self, tmp_path):
        feats = tmp_path / "f.ark"
        feats.write_text("u1  [\n  1 2 ]\n")
        assert main(["stride", "--feats", str(feats), "--n", "0",
                     "--out", str(tmp_path / "o.ark")]) == 1

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 1

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "phonepool" in capsys.readouterr().out

    def test_subcommand_help_documents_flags(self, capsys):
        assert main(["pool", "--help"]) == 0
        out = capsys.readouterr().out
        for flag in ("--feats", "--ali", "--inventory", "--out-feats",
                     "--out-segments", "--blank-mode", "--silence-labels",
                     "--report", "--report-json", "--config"):
            assert flag in out
