"""Smoke test for the quist_py extension.

Run after `maturin develop -m crates/python/Cargo.toml`, or after
`cargo build -p quist-python --release --features extension-module`, in which
case the built library is loaded from target/release.
"""

import importlib.util
import json
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    try:
        import quist_py

        return quist_py
    except ImportError:
        pass
    built = ROOT / "target" / "release" / "libquist_py.so"
    if not built.exists():
        sys.exit("quist_py is not installed and target/release/libquist_py.so is missing")
    staging = Path(tempfile.mkdtemp()) / "quist_py.so"
    shutil.copy(built, staging)
    spec = importlib.util.spec_from_file_location("quist_py", staging)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


TINY = """
seed = 0
mode = "quist"
target_language = "qx"

[paths]
train_corpus = "{d}/en_train.jsonl"
validation_corpus = "{d}/en_validation.jsonl"
test_corpus = "{d}/qx_test.jsonl"
target_questions = "{d}/qx_pool.jsonl"
translations = "{d}/qx_translations.json"

[exemplars]
sizes = [5]
seeds = [0]
size = 5
seed = 0

[model]
d_model = 16
n_heads = 2
n_layers = 1
d_ff = 32

[qtc.optim]
max_steps = 4

[qg]
max_steps = 4

[generation]
beam_size = 2
limit = 3
"""


def main():
    q = load_module()

    assert q.question_types()[0] == "When"
    assert q.classify_question("How many people live here?") == "How_number"
    assert q.classify_question("Is it raining?") is None
    assert q.rouge_l(["a b c"], ["a b c"]) == 1.0
    assert q.bleu4(["the cat sat on the mat"], ["the cat sat on the mat"]) == 1.0
    assert q.exact_match("The Cat.", ["cat"], "en") == 1
    mean, std = q.aggregate_runs([1.0, 2.0, 3.0])
    assert mean == 2.0 and abs(std - 1.0) < 1e-12
    assert q.detect_code_switching("when was the bridge built ?", "qx") == "full"
    try:
        q.aggregate_runs([])
    except ValueError:
        pass
    else:
        raise AssertionError("empty aggregate should raise")

    work = Path(tempfile.mkdtemp())
    data, out = work / "data", work / "out"
    assert q.run(["toy-data", "--out", str(data)]) == 0
    config = work / "tiny.toml"
    config.write_text(TINY.format(d=data))
    for cmd in ["build-bank", "train-qtc", "train-qg", "generate", "evaluate"]:
        assert q.run(["--config", str(config), "--out", str(out), cmd]) == 0, cmd
    assert q.run(["--config", str(config), "--out", str(out), "--backend", "external", "generate"]) == 2

    report = json.loads((out / "report.json").read_text())
    assert report[0]["language"] == "qx"

    bank = q.ExemplarBank.load(str(out / "bank.json"))
    assert "qx" in bank.languages() and len(bank) > 0
    assert len(bank.select("qx", "When", 5, 0)) == 5

    pipeline = q.Pipeline(str(out), exemplar_size=5, beam_size=2)
    result = pipeline.generate("mako", "mako ali jenga daraja mwaka 1990 huko pemba .", "qx")
    assert result["qtype"] in q.question_types()
    assert isinstance(result["question"], str)
    print("smoke test passed:", result)


if __name__ == "__main__":
    main()
