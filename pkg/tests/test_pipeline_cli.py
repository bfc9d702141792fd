import json

import pytest

from ekgen import cli, pipeline
from ekgen.config import load_config
from ekgen.corpus import Comment, Passage
from ekgen.ekg import build_global_ekg


SMALL = ["synth_passages=6", "synth_entities=4", "synth_chapters=2",
         "synth_comments=3", "min_chapter_tokens=10", "d_f=8", "d_model=8",
         "n_heads=2", "encoder_layers=1", "decoder_layers=1",
         "bilstm_layers=1", "gat_layers=1", "phase1_steps=5", "phase2_steps=2",
         "g2s_steps=30", "batch_size=4", "max_passage=32", "beam=2",
         "max_len=10"]


def _cfg(seed=0):
    return load_config(preset="desk", overrides=SMALL, seed=seed)


def test_missing_artifact_names_prerequisite_stage(tmp_path):
    with pytest.raises(pipeline.MissingArtifact, match="'ingest'"):
        pipeline.run_train_g2s(tmp_path, _cfg())


def test_full_small_pipeline_produces_all_artifacts(tmp_path):
    ws = tmp_path / "ws"
    cfg = _cfg()
    report = pipeline.run_full_pipeline(ws, cfg, generate_limit=2)
    assert set(report) == {"bleu", "precisions", "bp", "rouge_l"}
    for rel in ["data/novel.json", "corpus/corpus.json", "ekg/global.json",
                "ekg/topology.json", "embed/ekg_embed.bin", "g2s/model.bin",
                "g2s/model.json", "generate/comments.jsonl",
                "evaluate/report.json", "manifest.json"]:
        assert (ws / rel).exists(), rel
    manifest = json.loads((ws / "manifest.json").read_text())
    assert set(manifest["stages"]) >= {"synth", "ingest", "build-ekg",
                                       "train-ekg", "train-g2s", "generate",
                                       "evaluate"}
    with open(ws / "generate" / "comments.jsonl") as fh:
        records = [json.loads(line) for line in fh]
    assert len(records) == 2
    for rec in records:
        assert len(rec["comments"]) >= 1


def test_corpus_roundtrip_through_workspace(tmp_path):
    ws = tmp_path / "ws"
    cfg = _cfg()
    pipeline.run_synth(ws, cfg)
    out = pipeline.run_ingest(ws, cfg)
    novel, passages, mentions, vocab, n_e, mode = pipeline._load_corpus(out)
    assert mode == "char"
    assert n_e == 4
    assert passages and mentions
    assert all(len(p.comments) >= 3 for p in passages)
    # saved vocabulary decodes passage text back to the original tokens
    p = passages[0]
    assert vocab.decode(vocab.encode(p.text)) == p.text


def test_workspace_lock_blocks_second_writer(tmp_path):
    ws = tmp_path / "ws"
    with pipeline.workspace_lock(ws):
        with pytest.raises(RuntimeError, match="locked"):
            with pipeline.workspace_lock(ws):
                pass
    # released afterwards
    with pipeline.workspace_lock(ws):
        pass


def test_report_stats_single_passage():
    p = Passage(id="p", chapter_index=1, span=(0, 5), text=list("abcde"),
                entity_ids={0, 1},
                comments=[Comment(["x"], 1)] * 3)
    text = pipeline.report_stats(novel=object(), passages=[p])
    assert "# passages" in text
    assert "| 2.0" in text   # avg entities
    assert "| 3.0" in text   # avg comments


def test_report_stats_empty_corpus_no_division_error():
    text = pipeline.report_stats(novel=None, passages=[])
    assert "# passages" in text
    assert "| 0" in text


def test_cli_prerequisite_error_exit_code(tmp_path):
    code = cli.main(["train-g2s", "--workspace", str(tmp_path / "ws")])
    assert code == 3


def test_cli_config_error_exit_code(tmp_path):
    code = cli.main(["synth", "--workspace", str(tmp_path / "ws"),
                     "--set", "bogus=1"])
    assert code == 2


def test_cli_locked_workspace_exit_code(tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    (ws / ".lock").touch()
    code = cli.main(["synth", "--workspace", str(ws)])
    assert code == 4


def test_cli_synth_and_stats(tmp_path, capsys):
    ws = str(tmp_path / "ws")
    args = []
    for item in SMALL:
        args += ["--set", item]
    assert cli.main(["synth", "--workspace", ws] + args) == 0
    assert cli.main(["ingest", "--workspace", ws] + args) == 0
    assert cli.main(["stats", "--workspace", ws] + args) == 0
    out = capsys.readouterr().out
    assert "# passages" in out
    assert "Avg. # comments per passage" in out


def test_stats_relation_average_counts_cooccurring_pairs(tmp_path):
    ws = tmp_path / "ws"
    cfg = _cfg()
    pipeline.run_synth(ws, cfg)
    out = pipeline.run_ingest(ws, cfg)
    novel, passages, mentions, _, _, _ = pipeline._load_corpus(out)
    ekg = build_global_ekg(novel, mentions)
    text = pipeline.report_stats(novel, passages, ekg)
    line = next(l for l in text.splitlines() if "relations" in l)
    value = float(line.split("|")[1])
    assert value >= 0.0
