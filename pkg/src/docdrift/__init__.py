"""docdrift: recommend paragraph-level README updates from pull requests."""

from docdrift.readme_model import (
    ReadmeDocument,
    Section,
    HierarchyTree,
    build_hierarchy,
    node_at_level,
    segment_readme,
)

__version__ = "0.1.0"

__all__ = [
    "ReadmeDocument",
    "Section",
    "HierarchyTree",
    "build_hierarchy",
    "node_at_level",
    "segment_readme",
    "__version__",
]
