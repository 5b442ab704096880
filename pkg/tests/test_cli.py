import json
import shutil

import pytest

from dictation_rag.cli import main, parse_args
from dictation_rag.config import load_settings
from dictation_rag.errors import ConfigError
from helpers import FIXTURES

MOCK = ["--backend", "mock", "--mock-script", str(FIXTURES / "mock_gold.jsonl")]
PATHS = ["--ontology", str(FIXTURES / "ontology.json"), "--bank", str(FIXTURES / "bank.jsonl")]


def test_parse_args_examples():
    cmd = parse_args(["extract", "d.jsonl", "--shots", "5", "--out", "p.jsonl"])
    assert cmd.verb == "extract"
    assert cmd.options["dictations"] == "d.jsonl" and cmd.options["shots"] == 5 and cmd.options["out"] == "p.jsonl"
    cmd = parse_args(["evaluate", "p.jsonl", "g.jsonl", "--config", "c.toml"])
    assert (cmd.options["predictions"], cmd.options["gold"], cmd.config_path) == ("p.jsonl", "g.jsonl", "c.toml")
    assert parse_args(["describe", "--force"]).options["force"] is True


@pytest.mark.parametrize("argv", [["frobnicate"], [], ["extract"], ["retrieve", "x", "--shots", "many"]])
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        parse_args(argv)
    assert exc.value.code == 2


def test_help_exits_0(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "build-memory" in capsys.readouterr().out


def test_retrieve_text_is_stable(capsys):
    assert main(["retrieve", "Heart rate 88.", *PATHS]) == 0
    first = capsys.readouterr().out
    assert main(["retrieve", "Heart rate 88.", *PATHS]) == 0
    assert capsys.readouterr().out == first
    assert first.startswith("Schemas (N=10):")
    assert "Heart rate [hr]" in first.splitlines()[1]


def test_retrieve_json(capsys):
    assert main(["retrieve", "Pain is 4 out of 10.", *PATHS, "--json", "--shots", "3", "--schemas", "4"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert (doc["n_schemas"], doc["k_examples"]) == (4, 3)
    assert len(doc["schemas"]) == 4 and len(doc["examples"]) == 3
    assert [h["rank"] for h in doc["schemas"]] == [1, 2, 3, 4]
    assert doc["schemas"][0]["id"] == "pain"
    assert set(doc["examples"][0]) == {"rank", "id", "fused", "lexical", "dense", "segment"}


def test_missing_bank_exit_1(capsys, tmp_path):
    missing = tmp_path / "nope.jsonl"
    rc = main(["retrieve", "x", "--ontology", str(FIXTURES / "ontology.json"), "--bank", str(missing)])
    assert rc == 1
    assert str(missing) in capsys.readouterr().err


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


def obs(*pairs):
    return [{"schema": s, "value": v} for s, v in pairs]


def test_evaluate_prints_metrics(tmp_path, capsys):
    gold = tmp_path / "gold.jsonl"
    pred = tmp_path / "pred.jsonl"
    write_jsonl(gold, [{"id": "a", "text": "", "observations": obs(("A", "1"), ("B", "2"), ("C", "3"), ("D", "4"), ("E", "5"))}])
    write_jsonl(pred, [{"id": "a", "observations": obs(("A", "1"), ("b", "2 "), ("C", "3.0"), ("X", "9"))}])
    assert main(["evaluate", str(pred), str(gold)]) == 0
    assert capsys.readouterr().out.strip() == "0.750000 0.600000 0.666667"
    report = json.loads((tmp_path / "pred.report.json").read_text())
    assert report["totals"] == {"tp": 3, "fp": 1, "fn": 2}

    assert main(["evaluate", str(gold), str(gold), "--out", str(tmp_path / "r.json")]) == 0
    assert capsys.readouterr().out.strip() == "1.000000 1.000000 1.000000"


def test_evaluate_malformed_prediction(tmp_path, capsys):
    gold = tmp_path / "gold.jsonl"
    pred = tmp_path / "pred.jsonl"
    write_jsonl(gold, [{"id": "a", "text": "", "observations": []}])
    pred.write_text('{"id": "a", "observations": [{"schema": "A"}]}\n')
    assert main(["evaluate", str(pred), str(gold)]) == 1
    err = capsys.readouterr().err
    assert "MalformedRecord" in err and "line 1" in err


def test_extract_and_evaluate(tmp_path, capsys):
    out = tmp_path / "pred.jsonl"
    rc = main(["extract", str(FIXTURES / "dictations.jsonl"), *PATHS, *MOCK, "--out", str(out)])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["dictations"] == 5 and summary["failures"] == []
    assert main(["evaluate", str(out), str(FIXTURES / "dictations.jsonl")]) == 0
    assert capsys.readouterr().out.strip() == "1.000000 1.000000 1.000000"


def test_extract_requires_out(capsys):
    assert main(["extract", str(FIXTURES / "dictations.jsonl"), *PATHS, *MOCK]) == 1
    assert "--out" in capsys.readouterr().err


def test_extract_refuses_undescribed(tmp_path, capsys):
    argv = ["extract", str(FIXTURES / "dictations.jsonl"), "--ontology", str(FIXTURES / "ontology_undescribed.json")]
    assert main([*argv, *MOCK, "--out", str(tmp_path / "p.jsonl")]) == 1
    assert "UndescribedOntology" in capsys.readouterr().err


def test_build_memory_cli(tmp_path, capsys):
    out = tmp_path / "bank.jsonl"
    argv = ["build-memory", str(FIXTURES / "training.jsonl"), "--out", str(out)]
    rc = main([*argv, "--backend", "mock", "--mock-script", str(FIXTURES / "mock_pairs.jsonl")])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["entries"] == 6 and summary["coverage"] == 0.875
    assert len(out.read_text().splitlines()) == 6


def test_describe_cli(tmp_path, capsys):
    onto = tmp_path / "o.json"
    shutil.copy(FIXTURES / "ontology_undescribed.json", onto)
    script = tmp_path / "m.jsonl"
    script.write_text(json.dumps({"template_id": "describe", "match": {}, "response": "Generated text."}) + "\n")
    assert main(["describe", "--ontology", str(onto), "--backend", "mock", "--mock-script", str(script)]) == 0
    assert json.loads(capsys.readouterr().out)["calls"] == 2
    assert all(s["description"] for s in json.loads(onto.read_text()))


def test_config_file(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        '[paths]\nontology = "o.json"\n[pipeline]\nk_examples = 7\n'
        '[fusion.schema]\nalpha = 0.3\n[llm.generator]\nmodel = "big"\n'
    )
    s = load_settings(cfg, {"schemas": 4})
    assert s.ontology == str(tmp_path / "o.json")
    assert (s.pipeline.k_examples, s.pipeline.n_schemas) == (7, 4)
    assert s.pipeline.schema_fusion.alpha == 0.3 and s.pipeline.example_fusion.alpha == 0.5
    assert s.pipeline.generator.model == "big"
    assert load_settings(cfg, {"alpha": 0.9}).pipeline.example_fusion.alpha == 0.9


@pytest.mark.parametrize(
    "text", ['[paths]\nontolgy = "x"\n', "[pipeline]\nk_examples = -1\n", "[fusion.schema]\nalpha = 2.0\n", "x = ["]
)
def test_config_errors(tmp_path, text):
    cfg = tmp_path / "run.toml"
    cfg.write_text(text)
    with pytest.raises(ConfigError):
        load_settings(cfg)


def test_shots_only_changes_k(capsys):
    docs = {}
    for shots in (3, 5, 10, 15):
        assert main(["retrieve", "Temp 37.8 this morning.", *PATHS, "--json", "--shots", str(shots)]) == 0
        docs[shots] = json.loads(capsys.readouterr().out)
    for shots, doc in docs.items():
        assert doc["k_examples"] == shots and len(doc["examples"]) == shots
        assert doc["schemas"] == docs[15]["schemas"]
    # fused example scores depend on the K-sized candidate pool, so only the schema side is fixed
