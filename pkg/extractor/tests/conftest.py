import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from embed_extractor.encoders import register_encoder
from tone_encoder import ToneMapEncoder

# one shared instance per test session would leak recorded texts between
# tests, so the factory builds a fresh encoder and parks it where the
# test can reach it
LAST_ENCODER: dict = {}


def _factory(config):
    encoder = ToneMapEncoder(config)
    LAST_ENCODER["instance"] = encoder
    return encoder


register_encoder("tone-map", _factory)
