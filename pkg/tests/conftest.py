import importlib.util
from pathlib import Path

import pytest
from hypothesis import settings

from edlforge.edl_io import parse

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "corpus"
VALID = sorted((CORPUS / "valid").glob("*.edl.yaml"))
FAULTS = sorted((CORPUS / "faults").glob("*.edl.yaml"))

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")


def load_script(name):
    spec = importlib.util.spec_from_file_location(name, ROOT / "scripts" / f"{name}.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def read_doc(name):
    return parse((CORPUS / "valid" / f"{name}.edl.yaml").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def sc01():
    return read_doc("sc01")


@pytest.fixture(scope="session")
def sc02():
    return read_doc("sc02")


@pytest.fixture(scope="session")
def sc03():
    return read_doc("sc03")
