"""
KDiff command-line entry point.
"""
import logging
import sys
from typing import List, Optional

from app.core.config import settings

# Configure logging; stdout carries the JSON documents
logging.basicConfig(
    level=logging.DEBUG if settings.DEBUG else logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stderr)
    ]
)

# Set specific log levels for noisy libraries
logging.getLogger("shapely.geos").setLevel(logging.WARNING)

logger = logging.getLogger(__name__)


def main(argv: Optional[List[str]] = None) -> int:
    from app.cli.router import run

    logger.info(f"Starting {settings.APP_NAME} v{settings.APP_VERSION}")
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
