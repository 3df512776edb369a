"""Reproducible experiment harness behind the ``dlab`` command."""
