"""Offline stand-ins for the remote metadata services."""

from .generate import DEFAULT_MIX, generate_world
from .server import ServerHandle, serve
from .world import FixtureWorld, MockGri, WorldTransport, mock_services

__all__ = [
    "DEFAULT_MIX",
    "FixtureWorld",
    "MockGri",
    "ServerHandle",
    "WorldTransport",
    "generate_world",
    "mock_services",
    "serve",
]
