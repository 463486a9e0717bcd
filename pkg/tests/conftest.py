import sys
from pathlib import Path

# Make the shared fixture helpers importable as plain modules.
sys.path.insert(0, str(Path(__file__).parent))
