import json
import re

from utils.logger_config import get_logger

logger = get_logger(__name__)


def fix_invalid_json(text: str) -> str:
    """
    Attempts to fix common issues in hand-edited JSON documents
    (kernel families, run configurations).
    - Removes // and # line comments.
    - Removes trailing commas before closing brackets.
    - Replaces bare NaN/Infinity spellings with null.
    """
    text = re.sub(r'^\s*(//|#).*$', '', text, flags=re.MULTILINE)
    text = re.sub(r',\s*([\]}])', r'\1', text)
    text = re.sub(r'(?<![\w"])-?(Infinity|inf)(?![\w"])', 'null', text)
    return text


def tolerant_json_decode(text: str):
    """
    Tries to decode a JSON string, attempting to fix it if initial parsing fails.
    Returns None when the document cannot be decoded.
    """
    try:
        return json.loads(text)
    except json.JSONDecodeError as e1:
        logger.debug("Standard JSON decode failed: %s. Attempting to clean...", e1)
        try:
            cleaned_text = fix_invalid_json(text)
            logger.debug("Cleaned text for JSON parsing: %s", cleaned_text[:500])
            return json.loads(cleaned_text)
        except json.JSONDecodeError as e2:
            logger.error("Cleaned JSON decode failed: %s", e2)
            logger.error("Document snippet (first 800 chars): %s", text[:800])
            return None


def canonical_dumps(document) -> str:
    """Sorted-key, fixed-separator JSON used for hashing and bit-stable output files."""
    return json.dumps(document, sort_keys=True, separators=(",", ":"), allow_nan=False)
