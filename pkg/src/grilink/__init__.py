"""Reconcile funder award records with publication metadata from registries and a public access repository."""

__version__ = "0.1.0"
