"""Batch embedding extractor.

Loads a pretrained audio-text encoder pair, embeds each corpus sample's
audio clip and response sentence, and writes one embedding store file
per modality. The extractor talks to the rest of the toolkit purely
through file formats: it reads the corpus JSON-Lines layout and emits
the binary embedding-store layout, with no code dependency on the
consumer.
"""

__version__ = "0.1.0"
