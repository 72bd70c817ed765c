"""Fill-mask HTTP service backed by a small masked language model.

The package has three moving parts: `model` builds and drives the
masked-LM fill engine, `adapt` continues training it on seed text, and
`app` exposes the wire protocol over HTTP. `cli` ties them together.
"""

__version__ = "0.1.0"
