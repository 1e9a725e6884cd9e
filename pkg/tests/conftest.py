from __future__ import annotations

import pytest

from motiongcn.data import SyntheticSpec, load_dataset, load_manifest, synthesize


def make_dataset(root, **spec_fields):
    """Write a synthetic dataset under ``root`` and load it back at 30 Hz."""
    spec = SyntheticSpec(**spec_fields)
    manifest = load_manifest(synthesize(spec, root))
    return spec, load_dataset(manifest, spec.clip_length, (spec.height, spec.width), 30.0)


@pytest.fixture(scope="session")
def small_synthetic(tmp_path_factory):
    """Three subjects of six 16x16 clips, seed 7."""
    return make_dataset(
        tmp_path_factory.mktemp("small_synth"),
        num_subjects=3, clips_per_subject=6, height=16, width=16, seed=7,
    )


# one "criterion N: PASS|FAIL ..." line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
