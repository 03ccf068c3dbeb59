"""
Pytest configuration for the RD-JSCC platform.

Keeps collection inside tests/ and out of run outputs and reference material.
"""

# Directories to never recurse into
def pytest_ignore_collect(collection_path, config):
    """Ignore directories that shouldn't be collected as tests."""
    ignore_dirs = {
        'runs',
        'data',
        'examples',
        '.cache',
    }

    parts = collection_path.parts
    for ignore_dir in ignore_dirs:
        if ignore_dir in parts:
            return True

    return None
