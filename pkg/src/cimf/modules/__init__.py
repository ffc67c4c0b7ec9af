"""Executables of the bundled modules.

Each file here is on-boarded verbatim as a module executable and runs as
a child process inside a step sandbox, so every script only touches its
working directory.
"""
from pathlib import Path

HERE = Path(__file__).resolve().parent


def script(name: str) -> bytes:
    return (HERE / f"{name}.py").read_bytes()
