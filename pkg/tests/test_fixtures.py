import json
import os

import numpy as np
import pytest

from asmlp import fixtures


def test_committed_fixtures_regenerate_identically(repo_root):
    assert fixtures.regenerate_fixtures(os.path.join(repo_root, "fixtures")) == []


def test_regeneration_detects_tampering(tmp_path):
    root = tmp_path / "fx"
    fixtures.regenerate_fixtures(str(root), write=True)
    case = next(c for c in fixtures.generate_cases() if c.suite == "matmul")
    exp_dir = os.path.join(fixtures.case_dir(str(root), case))
    target = next(f for f in sorted(os.listdir(exp_dir)) if f != "meta")
    path = os.path.join(exp_dir, target)
    data = bytearray(open(path, "rb").read())
    data[-9] ^= 0x01
    open(path, "wb").write(bytes(data))
    assert fixtures.regenerate_fixtures(str(root))


def test_every_case_has_provenance():
    for case in fixtures.generate_cases():
        meta = case.meta()
        assert meta["kind"] in fixtures.FIXTURE_KINDS
        assert meta["generator"] and "seed" in meta


def test_readme_claims_are_backed(repo_root):
    with open(os.path.join(repo_root, "README.md"), encoding="utf-8") as fh:
        text = fh.read()
    assert fixtures.lint_document(text, os.path.join(repo_root, "fixtures")) == []


def test_lint_flags_orphans_and_wrong_backing(repo_root):
    root = os.path.join(repo_root, "fixtures")
    text = "Tiny has 27,431,424 weights and 9.9M extra.\n\n| claim | source |\n|---|---|\n" \
           "| 27,431,424 | closed-forms/small |\n"
    problems = fixtures.lint_document(text, root)
    assert any("9.9M" in p and "orphan" in p for p in problems)
    assert any("27,431,424" in p for p in problems)
