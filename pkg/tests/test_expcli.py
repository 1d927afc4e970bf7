"""Config grammar, artifact persistence, and the four CLI subcommands."""
import json
import os

import numpy as np
import pytest

from dilkit.datagen import ConfigError, FormatError, gen_hd_balls
from dilkit.expcli import (RunConfig, default_config_text, load_results,
                           load_stream, parse_config, parse_kv,
                           require_run_fields, save_stream,
                           stream_fingerprint)
from dilkit.expcli.cli import main
from dilkit.expcli.runio import (METRICS_HEADER, format_csv, metrics_rows,
                                 recompute_metrics, results_payload)
from dilkit.trainer import TrainerConfig, run_sequence
from dilkit.models import ArchConfig, SgdConfig

TINY = """
# three tiny ball domains
dataset = hd-balls
method = ER
seeds = 0
n_domains = 3
n_per_domain = 60
dim = 4
sigma = 0.4
steps_per_domain = 40
batch_size = 16
buffer_capacity = 30
encoder_hidden = 8
embed_dim = 4
predictor_hidden = none
disc_hidden = 8
"""


def write_cfg(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------------------
# grammar


def test_parse_kv_ignores_comments_and_blanks():
    kv = parse_kv("# heading\n\n  a = 1\nb=two words \n")
    assert kv == {"a": "1", "b": "two words"}


@pytest.mark.parametrize("bad,fragment", [
    ("a = 1\na = 2\n", "duplicate key"),
    ("just words\n", "exactly one '='"),
    ("x = a = b\n", "exactly one '='"),
    ("= 3\n", "empty key"),
])
def test_parse_kv_rejects_malformed_lines(bad, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_kv(bad)


def test_parse_config_empty_text_gives_defaults():
    c = parse_config("")
    assert c == RunConfig()
    assert c.dataset is None and c.seeds == ()
    assert c.sgd == SgdConfig(0.1, 100, 32)
    assert c.arch == ArchConfig([64], 32, [], [32])


def test_parse_config_reads_every_field_kind():
    c = parse_config(TINY.replace("seeds = 0", "seeds = 3, 1, 2")
                     + "split_memory_batch = true\n"
                       "omega_lr = 0.5\nlambda_d = 0.25\n")
    assert (c.dataset, c.method) == ("hd-balls", "ER")
    assert c.seeds == (3, 1, 2)          # order preserved, no dedup
    assert c.split_memory_batch is True
    assert c.omega_lr == 0.5 and c.hp.lambda_d == 0.25
    assert c.arch.encoder_hidden == [8] and c.arch.predictor_hidden == []
    assert c.sgd == SgdConfig(0.1, 40, 16)


@pytest.mark.parametrize("line,fragment", [
    ("dataset = mnist-classic", "dataset"),
    ("method = Adam", "valid methods"),
    ("steps_per_domain = ten", "cannot read"),
    ("split_memory_batch = yes", "cannot read"),
    ("frobnicate = 1", "unknown key"),
    ("dim = 1", "dim"),
    ("sigma = 0", "sigma"),
    ("buffer_capacity = 0", "buffer_capacity"),
    ("seeds = -1", "seeds"),
    ("learning_rate = -0.1", "learning_rate"),
])
def test_parse_config_field_level_errors(line, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(line + "\n")


def test_require_run_fields_names_the_missing_key():
    with pytest.raises(ConfigError, match="'dataset'"):
        require_run_fields(parse_config("method = ER\nseeds = 0\n"))
    with pytest.raises(ConfigError, match="'method'"):
        require_run_fields(parse_config("dataset = hd-balls\nseeds = 0\n"))
    with pytest.raises(ConfigError, match="'seeds'"):
        require_run_fields(parse_config("dataset = hd-balls\nmethod = ER\n"))


def test_default_template_parses_back():
    # every commented line, uncommented, must round-trip through the parser
    text = default_config_text()
    live = "\n".join(line[2:].split("   (")[0] for line in text.splitlines()
                     if line.startswith("# ") and "=" in line)
    c = parse_config(live)
    assert c.output_dir == "runs" and c.n_domains == 5


# ---------------------------------------------------------------------------
# stream persistence


def tiny_stream():
    return gen_hd_balls(0, 3, 60, 4, 0.4)


def test_stream_round_trip_bitwise(tmp_path):
    stream = tiny_stream()
    save_stream(stream, str(tmp_path / "s"))
    back = load_stream(str(tmp_path / "s"))
    assert back.n_domains == 3 and back.num_classes == 2
    for t in range(1, 4):
        for part, orig in (("train", stream.train(t)), ("test", stream.test(t))):
            loaded = back.train(t) if part == "train" else back.test(t)
            assert loaded.x.tobytes() == orig.x.tobytes()
            assert loaded.y.tobytes() == orig.y.tobytes()
    assert stream_fingerprint(back) == stream_fingerprint(stream)


def test_stream_same_seed_same_files(tmp_path):
    save_stream(tiny_stream(), str(tmp_path / "a"))
    save_stream(tiny_stream(), str(tmp_path / "b"))
    for name in sorted(os.listdir(tmp_path / "a")):
        assert (tmp_path / "a" / name).read_bytes() == \
               (tmp_path / "b" / name).read_bytes(), name


def test_load_stream_rejects_tampered_bytes(tmp_path):
    save_stream(tiny_stream(), str(tmp_path / "s"))
    path = tmp_path / "s" / "d02_train_y.npy"
    y = np.load(path)
    y[0] = 1 - y[0]
    np.save(path, y)
    with pytest.raises(FormatError, match="fingerprint"):
        load_stream(str(tmp_path / "s"))


def test_load_stream_missing_file(tmp_path):
    save_stream(tiny_stream(), str(tmp_path / "s"))
    os.remove(tmp_path / "s" / "d01_test_x.npy")
    with pytest.raises(FormatError, match="missing stream file"):
        load_stream(str(tmp_path / "s"))


# ---------------------------------------------------------------------------
# results payloads


def tiny_results(method="ER", seeds=(0, 1)):
    stream = tiny_stream()
    arch = ArchConfig([8], 4, [], [8])
    sgd = SgdConfig(0.2, 40, 16)
    return [run_sequence(stream, TrainerConfig(method, s, arch=arch, sgd=sgd,
                                               memory_capacity=30))
            for s in seeds]


def test_results_payload_summary_and_determinism():
    results = tiny_results()
    payload = results_payload("cfg text", results, {"name": "hd-balls"})
    finals = [r.avg_acc_by_domain[3] for r in results]
    assert payload["summary"]["avg_acc"]["mean"] == pytest.approx(np.mean(finals))
    assert payload["summary"]["avg_acc"]["std"] == pytest.approx(np.std(finals))
    assert payload["seeds"] == [0, 1]
    a = json.dumps(payload, sort_keys=True)
    b = json.dumps(results_payload("cfg text", tiny_results(),
                                   {"name": "hd-balls"}), sort_keys=True)
    assert a == b  # same seeds, same stream -> byte-identical document


def test_matrix_serializes_losslessly():
    result = tiny_results(seeds=(0,))[0]
    payload = results_payload("t", [result], {})
    lists = json.loads(json.dumps(payload))["per_seed"][0]["matrix"]
    assert lists == result.matrix.to_lists()
    assert lists[0][2] is None  # never-evaluated cell stays null


def test_recompute_metrics_matches_and_flags_tampering():
    payload = results_payload("t", tiny_results(seeds=(0,)), {})
    payload = json.loads(json.dumps(payload))  # force a JSON round trip
    rows, problems = recompute_metrics(payload)
    assert problems == []
    assert len(rows) == 3 and rows[-1][2] == 3
    payload["per_seed"][0]["avg_acc"]["3"] += 0.25
    _, problems = recompute_metrics(payload)
    assert any("avg_acc" in p for p in problems)


def test_metrics_csv_shape():
    results = tiny_results(seeds=(0,))
    text = format_csv(METRICS_HEADER, metrics_rows(results))
    lines = text.strip().split("\n")
    assert lines[0] == "method,seed,domain,avg_acc,forgetting,forward_transfer"
    assert len(lines) == 1 + 3
    assert lines[1].endswith(",,")  # domain 1: no forgetting, no transfer yet


# ---------------------------------------------------------------------------
# CLI subcommands (in-process)


def test_cli_run_writes_all_artifacts(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DILKIT_OUTPUT_DIR", str(tmp_path / "out"))
    code = main(["run", write_cfg(tmp_path, TINY), "--embeddings"])
    assert code == 0
    out_dir = tmp_path / "out" / "hd-balls-ER"
    for name in ("results.json", "metrics.csv", "omega.csv", "timing.json",
                 "embeddings.csv"):
        assert (out_dir / name).exists(), name
    payload = load_results(str(out_dir / "results.json"))
    assert payload["config_text"] == TINY
    assert payload["per_seed"][0]["matrix"][2][0] is not None
    assert "avg_acc" in capsys.readouterr().out
    header = (out_dir / "embeddings.csv").read_text().splitlines()[0]
    assert header == "seed,domain,label,e1,e2,e3,e4"


def test_cli_run_twice_is_bitwise_identical(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, TINY)
    blobs = []
    for sub in ("a", "b"):
        monkeypatch.setenv("DILKIT_OUTPUT_DIR", str(tmp_path / sub))
        assert main(["run", cfg]) == 0
        blobs.append(
            (tmp_path / sub / "hd-balls-ER" / "results.json").read_bytes())
    assert blobs[0] == blobs[1]


def test_cli_two_methods_share_dataset_fingerprint(tmp_path, monkeypatch):
    monkeypatch.setenv("DILKIT_OUTPUT_DIR", str(tmp_path / "out"))
    assert main(["run", write_cfg(tmp_path, TINY)]) == 0
    assert main(["run", write_cfg(
        tmp_path, TINY.replace("method = ER", "method = FineTune"),
        name="ft.cfg")]) == 0
    a = load_results(str(tmp_path / "out" / "hd-balls-ER" / "results.json"))
    b = load_results(str(tmp_path / "out" / "hd-balls-FineTune" / "results.json"))
    assert a["dataset"]["fingerprint"] == b["dataset"]["fingerprint"]
    assert a["method"] != b["method"]


def test_cli_unknown_method_lists_presets(tmp_path, capsys):
    bad = write_cfg(tmp_path, "dataset = hd-balls\nmethod = Adam\nseeds = 0\n")
    assert main(["run", bad]) == 2
    err = capsys.readouterr().err
    assert "valid methods" in err and "DER++" in err and "UDIL" in err


def test_cli_missing_config_is_config_error(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.cfg")]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_mnist_without_dir_is_config_error(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("DILKIT_MNIST_DIR", raising=False)
    bad = write_cfg(tmp_path, "dataset = r-mnist\nmethod = ER\nseeds = 0\n")
    assert main(["run", bad]) == 2
    assert "mnist_dir" in capsys.readouterr().err


def _write_synthetic_idx_dir(tmp_path, n_train=120, n_test=40):
    import struct
    rng = np.random.default_rng(5)
    d = tmp_path / "idx"
    d.mkdir()
    for stem, n in (("train", n_train), ("t10k", n_test)):
        imgs = rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
        with open(d / f"{stem}-images-idx3-ubyte", "wb") as f:
            f.write(struct.pack(">IIII", 0x00000803, *imgs.shape))
            f.write(imgs.tobytes())
        with open(d / f"{stem}-labels-idx1-ubyte", "wb") as f:
            f.write(struct.pack(">II", 0x00000801, n))
            f.write(rng.integers(0, 10, size=n, dtype=np.uint8).tobytes())
    return d


def test_cli_rotated_digits_pipeline_on_synthetic_idx(tmp_path, monkeypatch):
    idx_dir = _write_synthetic_idx_dir(tmp_path)
    monkeypatch.setenv("DILKIT_OUTPUT_DIR", str(tmp_path / "out"))
    cfg = write_cfg(tmp_path, f"""
dataset = r-mnist
mnist_dir = {idx_dir}
method = DER++
seeds = 0
n_domains = 3
n_per_domain = 40
n_test_per_domain = 12
degrees_per_domain = 20
steps_per_domain = 15
batch_size = 8
buffer_capacity = 20
encoder_hidden = 16
embed_dim = 8
predictor_hidden = none
disc_hidden = 8
""")
    assert main(["run", cfg]) == 0
    payload = load_results(
        str(tmp_path / "out" / "r-mnist-DER++" / "results.json"))
    assert payload["dataset"]["input_dim"] == 784
    assert payload["dataset"]["num_classes"] == 10
    assert payload["dataset"]["train_sizes"] == [40, 40, 40]
    assert payload["per_seed"][0]["matrix"][2][2] is not None


def test_cli_gen_data_round_trip_and_determinism(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, TINY)
    digests = []
    for sub in ("a", "b"):
        monkeypatch.setenv("DILKIT_OUTPUT_DIR", str(tmp_path / sub))
        assert main(["gen-data", cfg]) == 0
        d = tmp_path / sub / "hd-balls-s0"
        digests.append({n: (d / n).read_bytes()
                        for n in sorted(os.listdir(d))})
    assert digests[0] == digests[1]
    back = load_stream(str(tmp_path / "a" / "hd-balls-s0"))
    assert stream_fingerprint(back) == stream_fingerprint(tiny_stream())


def test_cli_verify_bounds_report_and_flip_sign(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DILKIT_OUTPUT_DIR", str(tmp_path / "vb"))
    cfg = write_cfg(tmp_path, "instances = 5\npoints_per_domain = 4\n"
                              "class_size = 16\ngrid_resolution = 4\n")
    assert main(["verify-bounds", cfg]) == 0
    report = json.loads((tmp_path / "vb" / "bounds-report.json").read_text())
    assert report["total_violations"] == 0
    assert set(report["checks"]) == {"intra_bound", "cross_bound",
                                     "unified_bound", "tightest_bound_grid",
                                     "erm_bound_shape"}
    for stats in report["checks"].values():
        assert {"checks", "violations", "max_slack", "min_slack"} <= set(stats)
    assert len(report["sample_argmin_omega"]) == report["n_domains"] - 1
    capsys.readouterr()
    assert main(["verify-bounds", cfg, "--selftest-flip-sign"]) == 1
    flipped = json.loads((tmp_path / "vb" / "bounds-report.json").read_text())
    assert flipped["flip_sign_selftest"] is True
    assert flipped["total_violations"] > 0


def test_cli_metrics_recomputes_and_detects_corruption(tmp_path, monkeypatch,
                                                       capsys):
    monkeypatch.setenv("DILKIT_OUTPUT_DIR", str(tmp_path / "out"))
    assert main(["run", write_cfg(tmp_path, TINY)]) == 0
    results = tmp_path / "out" / "hd-balls-ER" / "results.json"
    capsys.readouterr()  # drop the run summary
    assert main(["metrics", str(results)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == ",".join(METRICS_HEADER)
    payload = json.loads(results.read_text())
    payload["per_seed"][0]["forgetting"]["3"] = 0.77
    results.write_text(json.dumps(payload))
    assert main(["metrics", str(results)]) == 1
    assert "mismatch" in capsys.readouterr().err
