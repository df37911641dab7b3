"""Injection directory for the collection agent.

Point ``PYTHONPATH`` at this directory and every Python process started
thereafter imports the ``sitecustomize`` shim next to this file, which arms
the agent: collection runs at interpreter start and a terminal marker is
emitted at exit.  The shim swallows every failure so the host process is
never affected.
"""

from pathlib import Path

BOOT_DIR = str(Path(__file__).resolve().parent)

__all__ = ["BOOT_DIR"]
