import json
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Optional

import mock

FILES = Path(__file__).parent / "files"


def fixture_path(name: str) -> Path:
    """Path of a test/files config, e.g. fixture_path("small_ct")."""
    return FILES / f"{name}.json"


def write_fixture(directory: Path, name: str, **sections: Any) -> Path:
    """Copy of a test/files config with sections updated, written to directory.

    Dict values update the section in place, anything else replaces the key.
    """
    document = json.loads(fixture_path(name).read_text())
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(document.get(key), dict):
            document[key].update(value)
        else:
            document[key] = value
    path = Path(directory) / f"{name}.json"
    path.write_text(json.dumps(document))
    return path


@contextmanager
def patch_context(
    object_to_patch: object,
    attribute_to_patch: str,
    return_value: Optional[Any] = None,
    **kwargs,
) -> Iterator[mock.MagicMock]:
    """Patch an attribute of a module for the duration of the block.

    Pipeline and command tests patch module globals (e.g. pipeline.tmis_sample)
    so the failure surfaces through the real call path.
    """
    with mock.patch.object(object_to_patch, attribute_to_patch, **kwargs) as mocked_item:
        if return_value is not None:
            mocked_item.return_value = return_value
        yield mocked_item
