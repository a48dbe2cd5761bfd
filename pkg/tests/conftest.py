import copy
import json

import pytest

SMALL_MANIFEST = {
    "seed": 3,
    "workdir": "work",
    "paths": {
        "corpus": "corpus",
        "wordpiece_model": "wp.model",
        "lexicon": "lexicon.txt",
        "lm": "lm.arpa",
        "graph": "HLG.fst",
        "am_checkpoint": "am.ckpt",
        "nbest": "nbest.txt",
        "report": "report.json",
    },
    "synth": {"words": ["red", "blue", "green", "door", "open", "stop"], "n_utts": 30, "noise": 0.2,
              "feat_dim": 8},
    "wordpiece": {"vocab_size": 30},
    "lm": {"order": 2},
    "am": {"stride": 2, "context": 3, "hidden": [32], "epochs": 12, "batch_size": 4, "peak_lr": 0.003},
    "decode": {"beam": 12, "nbest": 3},
}


@pytest.fixture
def small_manifest(tmp_path):
    """Writes a small manifest into tmp_path and returns (path, dict)."""
    d = copy.deepcopy(SMALL_MANIFEST)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(d))
    return path, d


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    """Print and remember one acceptance line; shown again in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
