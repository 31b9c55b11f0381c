"""HTTP bridge wrapping pretrained models behind the motionweave backend endpoints."""

from .app import create_app
from .hub import HubUnavailable, ProceduralHub, RealModelHub, create_hub

__version__ = "0.1.0"
