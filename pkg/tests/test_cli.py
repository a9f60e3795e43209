import json
import subprocess
import sys

import numpy as np
import pytest

from mlc_asr_kit.augment import AudioBuffer, write_wav
from mlc_asr_kit.ckpt import TensorStore, read_store, write_store
from mlc_asr_kit.cli import run
from mlc_asr_kit.corpus import ManifestEntry, write_manifest
from mlc_asr_kit.textnorm import LANG_CONFIG_ENV, Language

SUBCOMMANDS = ["score", "detect-halluc", "decode-sim", "avg", "select-ckpt", "augment", "manifest-merge", "manifest-report", "prompt"]


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help(cmd, capsys):
    assert run([cmd, "--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_usage_errors(capsys):
    assert run(["nope"]) == 1
    assert run(["prompt", "--lang", "French", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_prompt(capsys, tmp_path):
    assert run(["prompt", "--lang", "English-British"]) == 0
    assert capsys.readouterr().out == "Transcribe speech to text\n"
    reg = write(tmp_path / "p.json", json.dumps({"French": "Transcrivez"}))
    assert run(["prompt", "--lang", "French", "--registry", reg]) == 0
    assert capsys.readouterr().out == "Transcrivez\n"
    assert run(["prompt", "--lang", "German", "--registry", reg]) == 1
    assert run(["prompt", "--lang", "Klingon"]) == 1


@pytest.fixture
def scoring_files(tmp_path):
    ref = write(tmp_path / "ref.tsv", "u1\tEnglish-American\tHello, world!\nu2\tJapanese\tこんにちは\nu3\tFrench\tun deux trois\n")
    hyp = write(tmp_path / "hyp.tsv", "u2\tJapanese\tこんばんは\nu1\tEnglish-American\thello word\nu3\tFrench\tun deux trois\n")
    return ref, hyp


def test_score(scoring_files, tmp_path, capsys):
    ref, hyp = scoring_files
    assert run(["score", "--ref", ref, "--hyp", hyp]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "Language\tSystem\tMetric"
    assert lines[1] == "English-American\t50.00\tWER"
    assert lines[3] == "Japanese\t40.00\tCER"
    # pooled: (1 + 0 + 2) / (2 + 3 + 5); macro: (0.5 + 0 + 0.4) / 3
    assert lines[-2] == "Avg. (pooled)\t30.00\tMER"
    assert lines[-1] == "Avg. (macro)\t30.00\tMER"
    out = tmp_path / "report.json"
    assert run(["score", "--ref", ref, "--hyp", hyp, "--format", "doc", "--out", str(out), "--jobs", "3"]) == 0
    doc = json.loads(out.read_text())
    assert doc["mer_pooled"] == pytest.approx(0.3) and doc["per_language"]["French"]["error_rate"] == 0.0


def test_score_identical_reruns(scoring_files, tmp_path):
    ref, hyp = scoring_files
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.tsv"
        plot = tmp_path / f"r{k}.png"
        assert run(["score", "--ref", ref, "--hyp", hyp, "--out", str(out), "--plot", str(plot)]) == 0
        outs.append(out.read_bytes())
        assert plot.stat().st_size > 0
    assert outs[0] == outs[1]


def test_score_mismatched_ids(tmp_path, capsys):
    ref = write(tmp_path / "ref.tsv", "a\tFrench\tx\nb\tFrench\ty\n")
    hyp = write(tmp_path / "hyp.tsv", "a\tFrench\tx\nc\tFrench\ty\n")
    assert run(["score", "--ref", ref, "--hyp", hyp]) == 1
    err = capsys.readouterr().err
    assert "no hypothesis: b" in err and "no reference: c" in err


def test_score_bad_inputs(tmp_path):
    ref = write(tmp_path / "ref.tsv", "a\tFrench\tx\n")
    hyp = write(tmp_path / "hyp.tsv", "a\tGerman\tx\n")
    assert run(["score", "--ref", ref, "--hyp", hyp]) == 1
    bad = write(tmp_path / "bad.tsv", "a\tKlingon\tx\n")
    assert run(["score", "--ref", bad, "--hyp", bad]) == 1
    assert run(["score", "--ref", str(tmp_path / "none"), "--hyp", hyp]) == 1


def test_score_lang_config_env(tmp_path, monkeypatch, capsys):
    cfg = write(tmp_path / "lang.json", json.dumps({"French": {"mode": "char", "metric": "cer"}}))
    ref = write(tmp_path / "ref.tsv", "a\tFrench\tabcd\n")
    hyp = write(tmp_path / "hyp.tsv", "a\tFrench\tabce\n")
    monkeypatch.setenv(LANG_CONFIG_ENV, cfg)
    assert run(["score", "--ref", ref, "--hyp", hyp]) == 0
    assert "French\t25.00" in capsys.readouterr().out


def test_detect_halluc(tmp_path, capsys):
    hyp = write(tmp_path / "hyp.tsv", "b\tEnglish-Indian\t" + "thank you " * 12 + "\na\tFrench\tbonjour\nc\tThai\t" + "ครับ" * 11 + "\n")
    assert run(["detect-halluc", "--hyp", hyp]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["b\t0\t12\tthank you", "c\t0\t11\tค รั บ"]
    assert run(["detect-halluc", "--hyp", hyp, "--min-repeats", "12", "--nmin", "2"]) == 0
    assert capsys.readouterr().out.splitlines() == ["b\t0\t12\tthank you"]


def test_decode_sim(tmp_path, capsys):
    scorer = {
        "vocab_size": 3,
        "eos_id": 0,
        "rows": [
            {"context": None, "suffix": [], "logprobs": [-2.0, -0.2, -2.5]},
            {"context": None, "suffix": [1], "logprobs": [-1.5, -0.3, -2.0]},
            {"context": "b", "suffix": [], "logprobs": [-3.0, -3.0, -0.1]},
            {"context": None, "suffix": [2], "logprobs": [-0.05, -3.0, -3.5]},
        ],
    }
    sc = write(tmp_path / "scorer.json", json.dumps(scorer))
    ctx = write(tmp_path / "ctx.tsv", "u2\tb\nu1\ta\n")
    assert run(["decode-sim", "--scorer", sc, "--contexts", ctx, "--max-len", "6"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [l.split("\t")[0] for l in lines] == ["u1", "u2"]
    assert lines[1] == f"u2\t{-0.1 - 0.05!r}\t2"
    tokens = lines[0].split("\t")[2].split()
    assert tokens and all(t == "1" for t in tokens)
    # With a unigram ban, token 1 can appear at most once.
    assert run(["decode-sim", "--scorer", sc, "--contexts", ctx, "--max-len", "6", "--no-repeat-ngram", "1"]) == 0
    first = capsys.readouterr().out.splitlines()[0].split("\t")[2].split()
    assert first.count("1") <= 1
    assert run(["decode-sim", "--scorer", sc, "--contexts", ctx, "--beam", "0"]) == 1


def _checkpoints(tmp_path, count):
    lines = []
    for k in range(count):
        step = 400 * (k + 1)
        write_store(TensorStore({"w": np.array([float(step)], np.float32)}), tmp_path / f"ckpt-{step}.safetensors")
        acc = 0.9 if step == 400 else 0.5
        lines.append(f"{step}\t{acc}\tckpt-{step}.safetensors")
    return write(tmp_path / "run.tsv", "\n".join(lines) + "\n")


def test_avg_run_log(tmp_path, capsys):
    log = _checkpoints(tmp_path, 20)
    out = tmp_path / "avg.safetensors"
    assert run(["avg", "--run-log", log, "--last", "15", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == list(range(2400, 8001, 400))
    assert read_store(out).tensors["w"][0] == np.float32(sum(range(2400, 8001, 400)) / 15)
    first = out.read_bytes()
    assert run(["avg", "--run-log", log, "--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_avg_files_and_errors(tmp_path, capsys):
    _checkpoints(tmp_path, 2)
    a, b = tmp_path / "ckpt-400.safetensors", tmp_path / "ckpt-800.safetensors"
    out = tmp_path / "avg.safetensors"
    assert run(["avg", "--out", str(out), str(a), str(b)]) == 0
    assert read_store(out).tensors["w"][0] == 600.0
    assert run(["avg", "--out", str(out)]) == 1
    corrupt = tmp_path / "corrupt.safetensors"
    corrupt.write_bytes(a.read_bytes()[:-2])
    assert run(["avg", "--out", str(out), str(a), str(corrupt)]) == 2
    assert "byte offset" in capsys.readouterr().err
    log = _checkpoints(tmp_path, 3)
    assert run(["avg", "--run-log", log, "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["underfull"] is True


def test_select_ckpt(tmp_path, capsys):
    log = _checkpoints(tmp_path, 10)
    assert run(["select-ckpt", "--run-log", log]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["stop_step"] == 2400 and doc["best_step"] == 400
    assert doc["best_path"].endswith("ckpt-400.safetensors")
    assert run(["select-ckpt", "--run-log", log, "--tolerance", "8000"]) == 0
    assert json.loads(capsys.readouterr().out)["stop_step"] is None


def _audio_manifest(tmp_path):
    rng = np.random.default_rng(2)
    entries = []
    for k in range(2):
        path = tmp_path / f"u{k}.wav"
        write_wav(AudioBuffer(rng.uniform(-0.5, 0.5, 1600), 16000), path)
        entries.append(ManifestEntry(f"u{k}", str(path), "ciao", Language.ITALIAN, 0.1, "mls"))
    manifest = tmp_path / "in.jsonl"
    write_manifest(entries, manifest)
    return str(manifest)


def test_augment(tmp_path, capsys):
    manifest = _audio_manifest(tmp_path)
    outs = []
    for k in range(2):
        out = tmp_path / f"aug{k}.jsonl"
        assert run(["augment", "--manifest", manifest, "--seed", "5", "--out-dir", str(tmp_path / "wav"), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert len(outs[0].decode().splitlines()) == 6
    policy = write(tmp_path / "policy.json", json.dumps({"speed_factors": [1.1], "volume_copies": 0}))
    assert run(["augment", "--manifest", manifest, "--policy", policy, "--out-dir", str(tmp_path / "w2")]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 2


def test_manifest_merge_and_report(tmp_path, capsys):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    write_manifest([ManifestEntry("x", "/x.wav", "t", Language.GERMAN, 1800.0, "cv")], a)
    write_manifest([ManifestEntry("x", "/y.wav", "t", Language.GERMAN, 3600.0, "mls")], b)
    merged = tmp_path / "m.jsonl"
    assert run(["manifest-merge", str(a), str(b), "--out", str(merged)]) == 0
    ids = [json.loads(l)["utterance_id"] for l in merged.read_text().splitlines()]
    assert ids == ["cv/x", "mls/x"]
    assert run(["manifest-merge", str(a), str(a), "--dedup"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 1
    plot = tmp_path / "hours.png"
    assert run(["manifest-report", str(merged), "--plot", str(plot)]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "total\t1.5\t1.5"
    assert plot.stat().st_size > 0
    assert run(["manifest-report", str(a), str(b), "--format", "doc"]) == 0
    assert json.loads(capsys.readouterr().out)["total_hours"] == 1.5
    bad = write(tmp_path / "bad.jsonl", "{}\n")
    assert run(["manifest-report", bad]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mlc_asr_kit", "prompt", "--lang", "English-Filipino"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == "Transcribe speech to text\n"
