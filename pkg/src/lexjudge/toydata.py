"""Access to the bundled miniature corpus.

The package ships a small synthetic corpus (twelve query cases, each with a
ten-candidate pool), a matching demonstration library, a legal-term lexicon,
and gold labels derived from the mock judge rules. It exists so the whole
pipeline can run offline; see the data files under data/toy.
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

TOY_FILES = ("cases.jsonl", "pools.json", "qrels.json", "demos.json", "lexicon.txt")


@dataclass(frozen=True, slots=True)
class ToyPaths:
    cases: Path
    pools: Path
    qrels: Path
    demos: Path
    lexicon: Path


def toy_paths() -> ToyPaths:
    """Filesystem paths of the bundled corpus files."""
    root = resources.files("lexjudge").joinpath("data/toy")
    paths = {name: Path(str(root.joinpath(name))) for name in TOY_FILES}
    return ToyPaths(
        cases=paths["cases.jsonl"],
        pools=paths["pools.json"],
        qrels=paths["qrels.json"],
        demos=paths["demos.json"],
        lexicon=paths["lexicon.txt"],
    )


def materialize(out_dir: str | Path) -> list[Path]:
    """Copy the bundled corpus into a directory; returns the copied paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    copied = []
    root = resources.files("lexjudge").joinpath("data/toy")
    for name in TOY_FILES:
        target = out / name
        shutil.copyfile(str(root.joinpath(name)), target)
        copied.append(target)
    return copied
