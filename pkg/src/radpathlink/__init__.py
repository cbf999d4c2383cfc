"""radpathlink: link pathology studies to their radiology counterparts in a PACS."""

__version__ = "0.1.0"
