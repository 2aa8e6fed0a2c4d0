"""Shared fixtures: fixture paths and a seeded random-markdown generator."""

from __future__ import annotations

import random
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
README_FIXTURES = sorted((FIXTURES / "readmes").glob("*.md"))

_WORDS = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima "
    "mike november oscar papa quebec romeo sierra tango uniform victor whiskey "
    "installation usage configuring deployment overview license contributing "
    "paquet naïve 数据 запуск"
).split()


def _sentence(rng: random.Random) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(rng.randint(2, 9)))


def make_random_markdown(rng: random.Random) -> str:
    """Generate a markdown document exercising every section kind.

    Includes ATX headers of all levels, setext headers, fenced code with
    internal blank lines, lists, tables, thematic breaks, and odd lines
    that must degrade to paragraphs.
    """
    blocks: list[str] = []
    for _ in range(rng.randint(0, 24)):
        roll = rng.random()
        if roll < 0.28:
            level = rng.randint(1, 6)
            blocks.append("#" * level + " " + _sentence(rng))
        elif roll < 0.34:
            blocks.append(_sentence(rng) + "\n" + rng.choice("=-") * rng.randint(1, 8))
        elif roll < 0.52:
            blocks.append("\n".join(_sentence(rng) for _ in range(rng.randint(1, 4))))
        elif roll < 0.64:
            marker = rng.choice(["-", "*", "+", "1.", "12)"])
            blocks.append(
                "\n".join(f"{marker} {_sentence(rng)}" for _ in range(rng.randint(1, 5)))
            )
        elif roll < 0.74:
            cols = rng.randint(1, 4)
            header = "| " + " | ".join(_WORDS[c] for c in range(cols)) + " |"
            delim = "|" + "|".join(" --- " for _ in range(cols)) + "|"
            row = "| " + " | ".join(_sentence(rng)[:12] for _ in range(cols)) + " |"
            blocks.append("\n".join([header, delim] + [row] * rng.randint(1, 3)))
        elif roll < 0.86:
            fence = rng.choice(["```", "````", "~~~"])
            body: list[str] = []
            for _ in range(rng.randint(0, 5)):
                body.append(rng.choice(["", "x = compute()", "  indented()", "# not a header"]))
            blocks.append(fence + rng.choice(["", "python", "sh"]) + "\n" + "\n".join(body) + "\n" + fence)
        else:
            blocks.append(
                rng.choice(
                    [
                        "---",
                        "#nospace",
                        "    indented code?",
                        "<h2>html header</h2>",
                        "> quoted line",
                        "|",
                        "-",
                    ]
                )
            )
    sep = lambda: "\n" * rng.randint(1, 3)  # noqa: E731
    text = ""
    for block in blocks:
        text += block + sep()
    if rng.random() < 0.3:
        text = text.replace("\n", "\r\n")  # exercise newline normalisation
    return text


@pytest.fixture
def markdown_rng() -> random.Random:
    return random.Random(0xD0C5)


@pytest.fixture
def readme_fixtures() -> list[Path]:
    assert len(README_FIXTURES) >= 10
    return README_FIXTURES
