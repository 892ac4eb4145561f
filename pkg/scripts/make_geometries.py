#!/usr/bin/env python3
"""Regenerate the bundled geometry JSON files from their builders."""

import json
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from eggmix.geometries import BUILDERS  # noqa: E402

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "eggmix" / "geometries"


def main():
    for name, builder in BUILDERS.items():
        doc = builder()
        path = OUT / f"{name}.json"
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                        encoding="utf-8")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
