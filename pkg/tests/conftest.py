"""Shared fixtures for the curvectrl test suite."""

import logging
import sys
import types
from pathlib import Path

import numpy as np
import pytest
import structlog

# pdb subclasses the stdlib cmd.Cmd; load it before the path insert and swap below
import pdb  # noqa: E402,F401

# Ensure repository root (parent of 'cmd') is on sys.path when tests run from workspace root
repo_root = Path(__file__).resolve().parents[1]
if str(repo_root) not in sys.path:
    sys.path.insert(0, str(repo_root))

# The stdlib ships a 'cmd' module; register the repository package in its place
pkg = types.ModuleType("cmd")
pkg.__path__ = [str(repo_root / "cmd")]
sys.modules["cmd"] = pkg

structlog.configure(wrapper_class=structlog.make_filtering_bound_logger(logging.WARNING))

from cmd.curvectrl import mesh  # noqa: E402
from cmd.curvectrl.fespace import FeSpace  # noqa: E402


@pytest.fixture
def space2():
    """P1 space on the 2 x 2 square: a single DOF at (0.5, 0.5)."""
    return FeSpace(mesh.build_uniform_square(2))


@pytest.fixture
def space4():
    return FeSpace(mesh.build_uniform_square(4))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
