import logging
import sys

from config import config

logging.basicConfig(
    level=getattr(logging, config.logging.level.upper(), logging.INFO),
    format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
    stream=sys.stdout,
)


def main():
    from viscolab.main import main as cli
    sys.exit(cli())


if __name__ == "__main__":
    main()
