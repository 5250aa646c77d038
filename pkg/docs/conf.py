#!/usr/bin/env python
#
# flexbody documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import os
import sys

sys.path.insert(0, os.path.abspath(".."))

from flexbody import __version__ as flexbody_version  # noqa: E402

# -- General configuration ---------------------------------------------

project = "flexbody"
copyright = "2026, flexbody developers"
author = "flexbody developers"

version = flexbody_version
release = flexbody_version

toc_object_entries = False

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.doctest",
    "sphinx.ext.coverage",
    "sphinx.ext.viewcode",
    "sphinx_rtd_theme",
    "sphinx.ext.napoleon",
]

templates_path = ["_templates"]
source_suffix = ".rst"
master_doc = "index"
language = "en"

exclude_patterns = [
    "_build",
    "Thumbs.db",
    ".DS_Store",
]

pygments_style = "sphinx"

# -- Options for HTML output -------------------------------------------

html_theme = "sphinx_rtd_theme"
add_module_names = False
html_title = "flexbody"

# -- Options for HTMLHelp output ---------------------------------------

htmlhelp_basename = "flexbodydoc"

# -- Options for LaTeX output ------------------------------------------

latex_elements = {}

latex_documents = [
    (
        master_doc,
        "flexbody.tex",
        "flexbody Documentation",
        author,
        "manual",
    ),
]

# -- Options for manual page output ------------------------------------

man_pages = [(master_doc, "flexbody", "flexbody Documentation", [author], 1)]

# -- Options for Texinfo output ----------------------------------------

texinfo_documents = [
    (
        master_doc,
        "flexbody",
        "flexbody Documentation",
        author,
        "flexbody",
        "Tool-state recognition and whole-body control for a flexible robot.",
        "Miscellaneous",
    ),
]

smartquotes = False
