# -*- coding: utf-8 -*-
#
# eae documentation build configuration file.
#
# This file is execfile()d with the current directory set to its containing dir.

import os
import sys

import alabaster

# If extensions (or modules to document with autodoc) are in another directory,
# add these directories to sys.path here.
sys.path.insert(0, os.path.abspath('..'))

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.viewcode',
    'sphinx.ext.intersphinx',
    'sphinx.ext.todo',
    'alabaster',
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'eae'
copyright = u'2026, the eae authors'

# The full version, including alpha/beta/rc tags.
release = __import__('eae').__version__
# The short X.Y version.
version = '.'.join(release.split('.')[:1])

exclude_patterns = ['_build']
pygments_style = 'sphinx'

autodoc_member_order = 'bysource'

# -- Options for HTML output ----------------------------------------------

html_theme = 'alabaster'
html_theme_options = {
    'description': 'Event-assisted streaming anomaly detection',
    'show_related': True,
    'page_width': '1000px',
    'sidebar_width': '260px',
}
html_theme_path = [alabaster.get_path()]
html_static_path = []
html_sidebars = {
    '**': [
        'about.html',
        'navigation.html',
        'relations.html',
        'searchbox.html',
    ]
}

htmlhelp_basename = 'eaedoc'

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
}
